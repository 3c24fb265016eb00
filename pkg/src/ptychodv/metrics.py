"""Phase-aligned NRMSE and Table-style aggregation."""

from dataclasses import dataclass, field
import csv
import io
import math

import numpy as np


def _masked(a, b, mask):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        return a[mask], b[mask]
    return a.ravel(), b.ravel()


def align_phase(xhat, x, mask=None):
    """Global phase in [0, 2*pi) minimizing ``||xhat - exp(i theta) x||``."""
    a, b = _masked(xhat, x, mask)
    if not np.any(b):
        raise ValueError("reference image is zero")
    return float(np.angle(np.vdot(b, a))) % (2.0 * math.pi)


def nrmse(xhat, x, mask=None):
    """``||xhat - exp(i theta*) x|| / ||x||`` over ``mask`` (all pixels if None)."""
    a, b = _masked(xhat, x, mask)
    ref = np.linalg.norm(b)
    if ref == 0:
        raise ValueError("reference image has zero norm")
    theta = align_phase(a, b)
    return float(np.linalg.norm(a - np.exp(1j * theta) * b) / ref)


@dataclass
class MetricReport:
    method: str
    values: list
    seconds: list = field(default_factory=list)
    pattern: str = ""

    def __post_init__(self):
        if not len(self.values):
            raise ValueError("a report needs at least one sample")
        self.values = [float(v) for v in self.values]
        self.seconds = [float(s) for s in self.seconds]

    @property
    def mean(self):
        return float(np.mean(self.values))

    @property
    def std(self):
        # population std: one sample gives 0
        return float(np.std(self.values))

    @property
    def sec_per_image(self):
        return float(np.mean(self.seconds)) if self.seconds else 0.0

    def cell(self, digits=3):
        return f"{self.mean:.{digits}f} ± {self.std:.2f} ({self.sec_per_image:.{digits}f})"


def report(rows):
    """Build :class:`MetricReport` objects from ``(method, pattern, values, seconds)`` tuples."""
    rows = list(rows)
    if not rows:
        raise ValueError("nothing to report")
    return [MetricReport(m, v, s, p) for m, p, v, s in rows]


def report_csv(reports, config_hash=""):
    """CSV text with one row per method/pattern."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "pattern", "n", "mean_nrmse", "std_nrmse", "sec_per_image", "cell", "config_hash"])
    for r in reports:
        w.writerow([r.method, r.pattern, len(r.values), f"{r.mean:.6g}", f"{r.std:.6g}",
                    f"{r.sec_per_image:.6g}", r.cell(), config_hash])
    return buf.getvalue()
