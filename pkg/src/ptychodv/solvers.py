"""Iterative phase retrieval: Wirtinger Flow, accelerated WF and PMACE."""

from dataclasses import dataclass, field
import csv
import math
import time

import numpy as np

from . import metrics
from .physics import DiffractionSet, data_fidelity, embed_all, extract_all, lambda_map
from .tensor import DimensionError, abs_eps, fft2, ifft2, phase_unit


@dataclass
class SolverConfig:
    algorithm: str = "wf"
    iterations: int = 100
    gamma: float | None = None
    kappa: float = 1.0
    rho: float = 0.5
    alpha: float = 0.5
    eps: float = 1e-12
    trace: bool = True

    def __post_init__(self):
        if self.algorithm not in ("wf", "awf", "pmace"):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if not 0 < self.rho <= 1:
            raise ValueError("rho must lie in (0, 1]")
        if self.kappa < 0:
            raise ValueError("kappa must be >= 0")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")


@dataclass
class ReconTrace:
    objective: list = field(default_factory=list)
    nrmse: list = field(default_factory=list)
    seconds: list = field(default_factory=list)

    def __len__(self):
        return len(self.objective)

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["iteration", "objective", "nrmse", "seconds"])
            for k, obj in enumerate(self.objective):
                e = self.nrmse[k] if k < len(self.nrmse) else ""
                w.writerow([k, repr(obj), repr(e) if e != "" else "", repr(self.seconds[k])])


class _Tracker:
    def __init__(self, data, probe, grid, cfg, reference, mask):
        self.args = (data, probe, grid)
        self.on = cfg.trace
        self.reference = reference
        self.mask = mask
        self.trace = ReconTrace()
        self.t0 = time.perf_counter()

    def __call__(self, x):
        if not self.on:
            return
        self.trace.objective.append(data_fidelity(x, *self.args))
        if self.reference is not None:
            self.trace.nrmse.append(metrics.nrmse(x, self.reference, self.mask))
        self.trace.seconds.append(time.perf_counter() - self.t0)


def _amps(data):
    return data.amplitudes if isinstance(data, DiffractionSet) else np.asarray(data)


def wf_gradient(x, data, probe, grid, eps=1e-12):
    """Unscaled Wirtinger Flow direction.

    Returns ``sum_i D_i^T P^H F^H (m_i - y_i m_i / |m_i|)`` with
    ``m_i = F P D_i x``. This is the gradient of the amplitude objective
    with respect to the real and imaginary parts of ``x``, packed as a
    complex image.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    y = _amps(data)
    m = fft2(probe.grid * extract_all(x, grid))
    if m.shape != y.shape:
        raise DimensionError(f"model {m.shape} vs data {y.shape}")
    r = m - y * phase_unit(m, eps)
    return embed_all(np.conj(probe.grid) * ifft2(r), grid)


def wf_step_size(probe, grid):
    """``1 / max(sum_i D_i^T |P|^2)``."""
    peak = lambda_map(probe, grid, 2).max()
    if not peak > 0:
        raise ValueError("probe has no energy on the scan grid")
    return 1.0 / peak


def _gamma(cfg, probe, grid):
    return wf_step_size(probe, grid) if cfg.gamma is None else float(cfg.gamma)


def run_wf(init, data, probe, grid, cfg, reference=None, mask=None):
    """Plain gradient descent with the Wirtinger Flow direction."""
    gamma = _gamma(cfg, probe, grid)
    x = np.array(init, dtype=np.complex128)
    track = _Tracker(data, probe, grid, cfg, reference, mask)
    track(x)
    for _ in range(cfg.iterations):
        x = x - gamma * wf_gradient(x, data, probe, grid, cfg.eps)
        track(x)
    return x, track.trace


def nesterov_weight(t):
    """Momentum weight and next ``t`` for the Nesterov sequence."""
    t_next = (1.0 + math.sqrt(1.0 + 4.0 * t * t)) / 2.0
    return (t - 1.0) / t_next, t_next


def run_awf(init, data, probe, grid, cfg, reference=None, mask=None):
    """Nesterov-accelerated Wirtinger Flow."""
    gamma = _gamma(cfg, probe, grid)
    x = np.array(init, dtype=np.complex128)
    z = x.copy()
    t = 1.0
    track = _Tracker(data, probe, grid, cfg, reference, mask)
    track(x)
    for _ in range(cfg.iterations):
        x_new = z - gamma * wf_gradient(z, data, probe, grid, cfg.eps)
        beta, t = nesterov_weight(t)
        z = x_new + beta * (x_new - x)
        x = x_new
        track(x)
    return x, track.trace


def pmace_prox(patches, y, probe, alpha, eps=1e-12):
    """Closed-form data-fitting proximal map for a stack of patches.

    In the Fourier domain the minimizer keeps the phase of ``m = F P x_i`` and
    replaces its modulus by ``(alpha |m| + y) / (1 + alpha)``. The correction
    is pulled back through a Tikhonov-regularized probe inverse.
    """
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    p = probe.grid
    patches = np.asarray(patches)
    m = fft2(p * patches)
    y = np.asarray(y)
    if m.shape != y.shape:
        raise DimensionError(f"model {m.shape} vs data {y.shape}")
    if math.isinf(alpha):
        return np.array(patches, dtype=np.complex128)
    mag = (alpha * abs_eps(m, 0.0) + y) / (1.0 + alpha)
    u = mag * phase_unit(m, eps)
    p2 = np.abs(p) ** 2
    delta = 1e-3 * p2.max()
    return patches + (np.conj(p) / (p2 + delta)) * ifft2(u - m)


def _consensus_weights(probe, grid, kappa):
    w = np.abs(probe.grid) ** kappa
    lam = lambda_map(probe, grid, kappa)
    inv = np.divide(1.0, lam, out=np.zeros_like(lam), where=lam > 0)
    return w, inv


def pmace_consensus(patches, probe, grid, kappa=1.0, weights=None):
    """Probe-weighted average of overlapping patches; zero where uncovered.

    ``weights`` takes the cached output of the weight computation when the
    same probe and grid are reused across iterations.
    """
    w, inv = weights or _consensus_weights(probe, grid, kappa)
    return embed_all(w * np.asarray(patches), grid) * inv


def pmace_iterate(w, data, probe, grid, cfg, weights=None):
    """One relaxed Mann step on the stacked patch state."""
    y = _amps(data)
    weights = weights or _consensus_weights(probe, grid, cfg.kappa)
    v = 2.0 * pmace_prox(w, y, probe, cfg.alpha, cfg.eps) - w
    g = extract_all(pmace_consensus(v, probe, grid, weights=weights), grid)
    u = 2.0 * g - v
    return (1.0 - cfg.rho) * w + cfg.rho * u


def run_pmace(init, data, probe, grid, cfg, reference=None, mask=None):
    """Projected multi-agent consensus equilibrium via Mann iteration."""
    y = _amps(data)
    weights = _consensus_weights(probe, grid, cfg.kappa)
    w = extract_all(np.asarray(init, dtype=np.complex128), grid)
    track = _Tracker(data, probe, grid, cfg, reference, mask)
    x = pmace_consensus(w, probe, grid, weights=weights)
    track(x)
    for k in range(cfg.iterations):
        w = pmace_iterate(w, y, probe, grid, cfg, weights)
        if track.on or k == cfg.iterations - 1:
            x = pmace_consensus(pmace_prox(w, y, probe, cfg.alpha, cfg.eps), probe, grid, weights=weights)
            track(x)
    return x, track.trace


def init_image(data, probe, grid):
    """Energy-matched constant image on the scan footprint, phase zero."""
    y = _amps(data)
    meas = float(np.sum(y**2)) / len(y)
    probe_energy = float(np.sum(np.abs(probe.grid) ** 2))
    mag = math.sqrt(meas / probe_energy) if probe_energy > 0 else 0.0
    return np.where(grid.counts() > 0, mag, 0.0).astype(np.complex128)


SOLVERS = {"wf": run_wf, "awf": run_awf, "pmace": run_pmace}


def reconstruct(init, data, probe, grid, cfg, reference=None, mask=None):
    return SOLVERS[cfg.algorithm](init, data, probe, grid, cfg, reference, mask)
