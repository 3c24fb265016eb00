"""Synthetic phantoms, Adam and the end-to-end training loop."""

from dataclasses import asdict, dataclass, field
import csv
import logging
import math
import time
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import io
from .metrics import nrmse
from .network import ModelConfig, PtychoDV, loss as joint_loss
from .physics import GroundTruthSample, coverage_mask, make_probe, make_scan_grid, simulate

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    """Raised when the loss or a parameter stops being finite."""


class CheckpointError(ValueError):
    """Raised when a checkpoint does not match the requested model."""


def parse_pattern(p):
    """``"16:4"`` or ``(16, 4)`` -> ``(16, 4)``."""
    if isinstance(p, str):
        n, l = p.split(":")
        return int(n), int(l)
    n, l = p
    return int(n), int(l)


@dataclass
class TrainConfig:
    n_train: int = 512
    n_val: int = 8
    image_side: int = 32
    patch_side: int = 8
    patterns: list = field(default_factory=lambda: ["16:4", "9:8"])
    probe: str = "A"
    r_p: float = 1e5
    lam: float = 1.0
    lr: float = 1e-3
    epochs: int = 8
    batch: int = 1
    seed: int = 0
    model: ModelConfig = field(default_factory=lambda: ModelConfig(k=2))

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = ModelConfig.from_dict(self.model)
        if self.n_train < 1 or self.n_val < 1:
            raise ValueError("dataset sizes must be >= 1")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if self.batch != 1:
            raise ValueError("only mini-batch size 1 is supported")
        self.patterns = [f"{n}:{l}" for n, l in map(parse_pattern, self.patterns)]

    def to_dict(self):
        return asdict(self)


# -- data --------------------------------------------------------------------

def _smooth_unit_field(rng, n, cutoff):
    f = np.fft.fftfreq(n)
    filt = np.exp(-(f[:, None] ** 2 + f[None, :] ** 2) / (2.0 * cutoff**2))
    a = np.fft.ifft2(np.fft.fft2(rng.standard_normal((n, n))) * filt).real
    return (a - a.min()) / (a.max() - a.min())


def make_phantom(image_side, seed, index, cutoff=0.15):
    """Low-pass complex field with magnitude in [0.5, 1] and phase in [-pi/2, pi/2]."""
    rng = np.random.default_rng([seed, index])
    mag = 0.5 + 0.5 * _smooth_unit_field(rng, image_side, cutoff)
    phase = np.pi * (_smooth_unit_field(rng, image_side, cutoff) - 0.5)
    return mag * np.exp(1j * phase)


def gen_dataset(count, image_side, seed, start=0):
    """``count`` phantoms, each determined by ``(seed, start + i)``."""
    if count < 1:
        raise ValueError("count must be >= 1")
    return [
        GroundTruthSample(make_phantom(image_side, seed, i),
                          {"seed": seed, "index": i, "image_side": image_side})
        for i in range(start, start + count)
    ]


# -- optimizer ---------------------------------------------------------------

@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(state, params, grads, lr):
    """Bias-corrected Adam update, in place on ``params`` and ``state``."""
    missing = [k for k in params if k not in grads]
    if missing:
        raise ad.ContractError(f"no gradient for {missing[:3]}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for k in params:
        g = grads[k]
        if k not in state.m:
            state.m[k] = np.zeros_like(params[k])
            state.v[k] = np.zeros_like(params[k])
        m, v = state.m[k], state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        params[k] -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


# -- checkpoints -------------------------------------------------------------

def _fname(name):
    return name.replace("/", "_") + ".ptyt"


def checkpoint_save(model, path, extra=None):
    """Write ``manifest.json`` plus one tensor file per parameter under ``path``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = []
    for name in sorted(model.params):
        a = model.params[name]
        io.write_tensor(path / _fname(name), a)
        entries.append({"name": name, "file": _fname(name), "shape": list(a.shape)})
    manifest = {"format": "ptychodv-checkpoint", "version": 1,
                "config": model.cfg.to_dict(), "params": entries}
    if extra:
        manifest["extra"] = extra
    io.write_json(path / "manifest.json", manifest)
    return path


def checkpoint_load(path, cfg=None):
    """Load a checkpoint; ``cfg`` (optional) must match the stored hyperparameters."""
    path = Path(path)
    try:
        manifest = io.read_json(path / "manifest.json")
    except FileNotFoundError:
        raise CheckpointError(f"no manifest in {path}") from None
    stored = ModelConfig.from_dict(manifest["config"])
    if cfg is not None and cfg.to_dict() != stored.to_dict():
        raise CheckpointError("checkpoint hyperparameters do not match the requested model")
    expected = {k: v.shape for k, v in PtychoDV(stored, seed=0).params.items()}
    params = {}
    for e in manifest["params"]:
        a = io.read_tensor(path / e["file"])
        if list(a.shape) != e["shape"] or expected.get(e["name"]) != a.shape:
            raise CheckpointError(f"shape mismatch for {e['name']}: {a.shape}")
        params[e["name"]] = a
    if set(params) != set(expected):
        raise CheckpointError("parameter set does not match the architecture")
    return PtychoDV(stored, params)


# -- training ----------------------------------------------------------------

EVAL_STREAM = 1 << 30


def sample_seed(seed, epoch, index):
    """Noise seed for one simulated measurement, recorded in diagnostics."""
    return int(np.random.SeedSequence([seed, epoch, index]).generate_state(1)[0])


def train_step(model, state, data, probe, grid, truth, lr, lam):
    tape = ad.Tape()
    P = model.bind(tape)
    xk, patches = model.forward(tape, data, probe, grid, bound=P)
    L = joint_loss(xk, patches, truth, grid, lam)
    value = float(L.value)
    if not math.isfinite(value):
        return value
    grads = ad.backward(tape, L, P.values())
    adam_step(state, model.params, grads, lr)
    return value


def evaluate_model(model, samples, probe, patterns, r_p, seed, k=None):
    """Mean phase-aligned NRMSE over ``samples`` on illuminated pixels."""
    errs = []
    for i, s in enumerate(samples):
        grid = make_scan_grid(s.image.shape[0], probe.side, *parse_pattern(patterns[i % len(patterns)]))
        d = simulate(s.image, probe, grid, r_p, sample_seed(seed, EVAL_STREAM, i))
        errs.append(nrmse(model.reconstruct(d, probe, grid, k), s.image, coverage_mask(probe, grid)))
    return float(np.mean(errs))


def train(cfg, out_dir=None, model=None, callback=None):
    """Train PtychoDV end to end.

    Returns ``(model, history)`` where ``history`` is a list of per-epoch
    dicts with ``epoch``, ``train_loss``, ``val_nrmse`` and ``seconds``.
    """
    model = model or PtychoDV(cfg.model, seed=cfg.seed)
    probe = make_probe(cfg.probe, cfg.patch_side, cfg.seed)
    patterns = [parse_pattern(p) for p in cfg.patterns]
    grids = [make_scan_grid(cfg.image_side, cfg.patch_side, n, l) for n, l in patterns]
    train_set = gen_dataset(cfg.n_train, cfg.image_side, cfg.seed)
    val_set = gen_dataset(cfg.n_val, cfg.image_side, cfg.seed + 1)
    state = AdamState()
    order_rng = np.random.default_rng([cfg.seed, 7])
    history = []
    t0 = time.perf_counter()
    for epoch in range(cfg.epochs):
        losses = []
        for i in order_rng.permutation(cfg.n_train):
            grid = grids[i % len(grids)]
            nseed = sample_seed(cfg.seed, epoch, int(i))
            x = train_set[i].image
            data = simulate(x, probe, grid, cfg.r_p, nseed)
            value = train_step(model, state, data, probe, grid, x, cfg.lr, cfg.lam)
            if not math.isfinite(value):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, sample {int(i)} "
                    f"(phantom seed {cfg.seed}, noise seed {nseed})")
            losses.append(value)
        bad = [k for k, v in model.params.items() if not np.all(np.isfinite(v))]
        if bad:
            raise TrainingError(f"non-finite parameters after epoch {epoch}: {bad[:3]}")
        row = {
            "epoch": epoch,
            "train_loss": float(np.mean(losses)),
            "val_nrmse": evaluate_model(model, val_set, probe, cfg.patterns, cfg.r_p, cfg.seed + 1),
            "seconds": time.perf_counter() - t0,
        }
        history.append(row)
        log.info("epoch %d loss %.5g val nrmse %.4f", epoch, row["train_loss"], row["val_nrmse"])
        if callback:
            callback(row)
    if out_dir is not None:
        out_dir = Path(out_dir)
        checkpoint_save(model, out_dir / "checkpoint", {"train": cfg.to_dict()})
        write_metrics(history, out_dir / "metrics.csv")
    return model, history


def write_metrics(history, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_nrmse", "seconds"])
        for r in history:
            w.writerow([r["epoch"], repr(r["train_loss"]), repr(r["val_nrmse"]), f"{r['seconds']:.3f}"])
