"""Scenario runners behind the command line: simulate, train, reconstruct, evaluate, study."""

import csv
import logging
import time
from pathlib import Path

import numpy as np

from . import io
from .metrics import MetricReport, nrmse, report_csv
from .network import ModelConfig, ViTConfig
from .physics import DiffractionSet, coverage_mask, make_probe, make_scan_grid, simulate
from .solvers import SolverConfig, init_image, reconstruct as run_solver
from .trainer import (TrainConfig, checkpoint_load, gen_dataset, parse_pattern,
                      sample_seed, train as train_model)

log = logging.getLogger(__name__)

TEST_STREAM = 2


def model_config(cfg):
    m, v = cfg.model, cfg.model.vit
    vit = ViTConfig(d=v.d, depth=v.depth, heads=v.heads, mlp_ratio=v.mlp_ratio,
                    l_f=v.l_f, patch_side=cfg.data.patch_side)
    return ModelConfig(vit, k=m.k, cnn_width=m.cnn_width, cnn_kernel=m.cnn_kernel,
                       eps=m.eps, share_phi=m.share_phi)


def train_config(cfg):
    t, d = cfg.train, cfg.data
    return TrainConfig(n_train=t.n_train, n_val=t.n_val, image_side=d.image_side,
                       patch_side=d.patch_side, patterns=list(d.patterns), probe=d.probe,
                       r_p=d.r_p, lam=t.lam, lr=t.lr, epochs=t.epochs, seed=cfg.seed,
                       model=model_config(cfg))


def solver_config(cfg, algorithm, iterations=None, trace=False):
    s = cfg.solver
    return SolverConfig(algorithm, s.iterations if iterations is None else iterations,
                        s.gamma, s.kappa, s.rho, s.alpha, s.eps, trace)


def pattern_tag(p):
    n, l = parse_pattern(p)
    return f"{n}-{l}"


# -- datasets ----------------------------------------------------------------

def simulate_dataset(cfg, out, probe_kind=None):
    """Write a seeded test set for every configured pattern; return the manifest."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    d = cfg.data
    kind = probe_kind or d.probe
    probe = make_probe(kind, d.patch_side, cfg.seed)
    io.write_tensor(out / "probe.ptyt", probe.grid)
    samples = gen_dataset(d.count, d.image_side, cfg.seed + TEST_STREAM)
    manifest = {
        "kind": "ptychodv-dataset",
        "config_hash": cfg.hash(),
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "phantom_seed": cfg.seed + TEST_STREAM,
        "image_side": d.image_side,
        "patch_side": d.patch_side,
        "probe": {"kind": kind, "file": "probe.ptyt", "shape": list(probe.grid.shape)},
        "noise": ({"kind": "none"} if np.isinf(d.r_p)
                  else {"kind": "poisson", "r_p": d.r_p, "scope": d.max_scope}),
        "patterns": [],
        "samples": [],
    }
    grids = []
    for p in d.patterns:
        n, l = parse_pattern(p)
        grid = make_scan_grid(d.image_side, d.patch_side, n, l)
        grids.append(grid)
        tag = pattern_tag(p)
        io.write_tensor(out / f"grid_{tag}.ptyt", grid.locations.astype(np.float64))
        manifest["patterns"].append({"pattern": f"{n}:{l}", "n": n, "spacing": l,
                                     "grid_file": f"grid_{tag}.ptyt"})
    for i, s in enumerate(samples):
        entry = {"index": i, "truth": f"truth_{i:03d}.ptyt",
                 "shape": list(s.image.shape), "amplitudes": []}
        io.write_tensor(out / entry["truth"], s.image)
        for j, (p, grid) in enumerate(zip(d.patterns, grids)):
            nseed = sample_seed(cfg.seed + TEST_STREAM, j, i)
            data = simulate(s.image, probe, grid, d.r_p, nseed, d.max_scope)
            fname = f"amp_{i:03d}_{pattern_tag(p)}.ptyt"
            io.write_tensor(out / fname, data.amplitudes)
            entry["amplitudes"].append({"pattern": p, "file": fname, "count": len(grid),
                                        "shape": list(data.amplitudes.shape),
                                        "noise_seed": nseed})
        manifest["samples"].append(entry)
    io.write_json(out / "manifest.json", manifest)
    return manifest


def load_dataset(path):
    """Yield ``(index, pattern, truth, data, probe, grid)`` for a simulated dataset."""
    path = Path(path)
    man = io.read_json(path / "manifest.json")
    probe_arr = io.read_tensor(path / man["probe"]["file"])
    from .physics import Probe
    probe = Probe(probe_arr, man["probe"]["kind"])
    grids = {}
    for p in man["patterns"]:
        grids[p["pattern"]] = make_scan_grid(man["image_side"], man["patch_side"], p["n"], p["spacing"])
    items = []
    for s in man["samples"]:
        truth = io.read_tensor(path / s["truth"])
        for a in s["amplitudes"]:
            key = "{}:{}".format(*parse_pattern(a["pattern"]))
            grid = grids[key]
            amps = io.read_tensor(path / a["file"])
            items.append((s["index"], key, truth, DiffractionSet(amps, grid.coords), probe, grid))
    return man, items


# -- methods -----------------------------------------------------------------

def run_method(method, cfg, data, probe, grid, model=None, iterations=None, trace=False,
               reference=None, mask=None):
    """Run one method; returns ``(image, seconds, trace_or_None)``."""
    t0 = time.perf_counter()
    tr = None
    if method in ("wf", "awf", "pmace"):
        x0 = init_image(data, probe, grid)
        x, tr = run_solver(x0, data, probe, grid, solver_config(cfg, method, iterations, trace),
                           reference, mask)
    elif method in ("vit", "ptychodv"):
        if model is None:
            raise ValueError(f"method {method} needs a checkpoint")
        x = model.reconstruct(data, probe, grid, k=0 if method == "vit" else None)
    elif method == "ptychodv+pmace":
        if model is None:
            raise ValueError(f"method {method} needs a checkpoint")
        x0 = model.reconstruct(data, probe, grid)
        x, tr = run_solver(x0, data, probe, grid, solver_config(cfg, "pmace", iterations, trace),
                           reference, mask)
    else:
        raise ValueError(f"unknown method {method!r}")
    return x, time.perf_counter() - t0, (tr if trace else None)


def _write_reports(out, rows, cfg_hash, per_sample):
    reports = [MetricReport(m, v, s, p) for (m, p), (v, s) in rows.items()]
    # NRMSE statistics only: deterministic under fixed seeds
    with open(out / "report.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["method", "pattern", "n", "mean_nrmse", "std_nrmse", "config_hash"])
        for r in reports:
            w.writerow([r.method, r.pattern, len(r.values), repr(r.mean), repr(r.std), cfg_hash])
    (out / "table.csv").write_text(report_csv(reports, cfg_hash))
    with open(out / "samples.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["method", "pattern", "sample", "nrmse"])
        for row in per_sample:
            w.writerow([row[0], row[1], row[2], repr(row[3])])
    return reports


def evaluate_dataset(cfg, dataset, out, model=None, images=False, traces=False):
    """Run ``cfg.methods`` over every sample and pattern; write CSV reports.

    With ``images`` the first sample of each pattern is exported as PGM maps,
    tensor files and a montage figure; with ``traces`` its iterative runs
    also write per-iteration CSV traces.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    man, items = load_dataset(dataset)
    if model is None and any(m in ("vit", "ptychodv", "ptychodv+pmace") for m in cfg.methods):
        if cfg.checkpoint is None:
            raise ValueError("network methods need a checkpoint")
        model = checkpoint_load(cfg.checkpoint, model_config(cfg))
    rows, per_sample = {}, []
    shown = set()
    for idx, pattern, truth, data, probe, grid in items:
        mask = coverage_mask(probe, grid)
        first = pattern not in shown
        shown.add(pattern)
        recon, scores = {}, {}
        for m in cfg.methods:
            x, sec, _ = run_method(m, cfg, data, probe, grid, model)
            e = nrmse(x, truth, mask)
            vals, secs = rows.setdefault((m, pattern), ([], []))
            vals.append(e)
            secs.append(sec)
            per_sample.append((m, pattern, idx, e))
            recon[m], scores[m] = x, e
            if first and traces and m in ("wf", "awf", "pmace", "ptychodv+pmace"):
                _, _, tr = run_method(m, cfg, data, probe, grid, model, trace=True,
                                      reference=truth, mask=mask)
                tr.to_csv(out / f"trace_{m.replace('+', '_')}_{pattern_tag(pattern)}.csv")
        if first and images:
            from .plotting import montage
            tag = pattern_tag(pattern)
            for m, x in recon.items():
                stem = out / f"{m.replace('+', '_')}_{tag}_s{idx:03d}"
                io.write_tensor(stem.with_suffix(".ptyt"), x)
                io.image_export(x, stem)
            montage(recon, out / f"montage_{tag}_s{idx:03d}.png", truth, mask, scores,
                    f"pattern {pattern}, sample {idx}")
    return _write_reports(out, rows, cfg.hash(), per_sample)


# -- scenarios ---------------------------------------------------------------

def scenario_simulate(cfg):
    out = Path(cfg.out)
    return simulate_dataset(cfg, out / "dataset")


def scenario_train(cfg):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    model, history = train_model(train_config(cfg), out)
    io.write_json(out / "train_config.json", {"config_hash": cfg.hash(), "config": cfg.to_dict()})
    return model, history


def _dataset_path(cfg):
    if cfg.dataset is not None:
        return Path(cfg.dataset)
    path = Path(cfg.out) / "dataset"
    if not (path / "manifest.json").exists():
        simulate_dataset(cfg, path)
    return path


def scenario_reconstruct(cfg):
    return evaluate_dataset(cfg, _dataset_path(cfg), Path(cfg.out) / "reconstruct",
                            images=True, traces=True)


def scenario_evaluate(cfg):
    return evaluate_dataset(cfg, _dataset_path(cfg), Path(cfg.out) / "evaluate")


def initializer_study(cfg, model=None):
    """PMACE from the baseline initializer versus from PtychoDV, per probe.

    The network is used as trained (probe A); probe B data only appears at
    test time. Returns ``{probe: [MetricReport, ...]}``.
    """
    out = Path(cfg.out) / "initializer_study"
    out.mkdir(parents=True, exist_ok=True)
    if model is None:
        if cfg.checkpoint is None:
            raise ValueError("the initializer study needs a checkpoint")
        model = checkpoint_load(cfg.checkpoint, model_config(cfg))
    st = cfg.study
    table = {}
    for kind in st.probes:
        path = out / f"dataset_{kind}"
        if not (path / "manifest.json").exists():
            simulate_dataset(cfg, path, probe_kind=kind)
        _, items = load_dataset(path)
        runs = [
            (f"PtychoDV-{kind}", "ptychodv", None),
            (f"PMACE-{kind}", "pmace", st.full_iterations),
            (f"PMACE-{kind}-{st.iterations}", "pmace", st.iterations),
            (f"PMACE-{kind}-{st.iterations} w/ PtychoDV", "ptychodv+pmace", st.iterations),
            (f"PMACE-{kind} w/ PtychoDV", "ptychodv+pmace", st.full_iterations),
        ]
        rows, per_sample = {}, []
        for idx, pattern, truth, data, probe, grid in items:
            mask = coverage_mask(probe, grid)
            for label, method, iters in runs:
                x, sec, _ = run_method(method, cfg, data, probe, grid, model, iterations=iters)
                e = nrmse(x, truth, mask)
                vals, secs = rows.setdefault((label, pattern), ([], []))
                vals.append(e)
                secs.append(sec)
                per_sample.append((label, pattern, idx, e))
        sub = out / f"probe_{kind}"
        sub.mkdir(exist_ok=True)
        table[kind] = _write_reports(sub, rows, cfg.hash(), per_sample)
    return table


SCENARIO_RUNNERS = {
    "simulate": scenario_simulate,
    "train": scenario_train,
    "reconstruct": scenario_reconstruct,
    "evaluate": scenario_evaluate,
    "initializer-study": initializer_study,
}
