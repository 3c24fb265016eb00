"""Ptychographic forward model: probes, scan grids, patch operators and detector."""

from dataclasses import dataclass, field
import math

import numpy as np

from .tensor import DimensionError, abs_eps, fft2

NOISE_FREE = math.inf


class GeometryError(ValueError):
    """Raised when a scan grid does not fit inside the image."""


@dataclass(frozen=True, eq=False)
class Probe:
    grid: np.ndarray
    label: str = "custom"

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=np.complex128)
        if g.ndim != 2 or g.shape[0] != g.shape[1]:
            raise DimensionError(f"probe must be square, got {g.shape}")
        if not np.max(np.abs(g)) > 0:
            raise ValueError("probe must not be identically zero")
        object.__setattr__(self, "grid", g)

    @property
    def side(self):
        return self.grid.shape[0]


@dataclass(frozen=True, eq=False)
class ScanGrid:
    """Ordered top-left probe offsets on a square image.

    ``pattern`` is ``(N, L)``: a sqrt(N) x sqrt(N) lattice with spacing L.
    """

    locations: np.ndarray
    patch_side: int
    image_side: int
    pattern: tuple = (0, 0)

    def __post_init__(self):
        locs = np.asarray(self.locations, dtype=np.int64).reshape(-1, 2)
        s, n = self.patch_side, self.image_side
        if locs.size and (locs.min() < 0 or locs.max() + s > n):
            raise GeometryError(f"patch of side {s} leaves the {n}x{n} image")
        if len({tuple(r) for r in locs}) != len(locs):
            raise GeometryError("scan locations must be distinct")
        object.__setattr__(self, "locations", locs)
        rows = locs[:, 0, None, None] + np.arange(s)[None, :, None]
        cols = locs[:, 1, None, None] + np.arange(s)[None, None, :]
        object.__setattr__(self, "_rows", np.broadcast_to(rows, (len(locs), s, s)))
        object.__setattr__(self, "_cols", np.broadcast_to(cols, (len(locs), s, s)))
        counts = np.zeros((n, n))
        for r, q in locs:
            counts[r:r + s, q:q + s] += 1.0
        counts.flags.writeable = False
        object.__setattr__(self, "_counts", counts)

    def __len__(self):
        return len(self.locations)

    @property
    def shape(self):
        return (self.image_side, self.image_side)

    @property
    def coords(self):
        """Patch centers normalized to [0, 1]^2, shape ``(N, 2)``."""
        return (self.locations + self.patch_side / 2.0) / self.image_side

    def index(self):
        """Fancy-index pair mapping an image to its ``(N, s, s)`` patch stack."""
        return self._rows, self._cols

    def counts(self):
        """Number of patch footprints covering each pixel (read-only)."""
        return self._counts


@dataclass
class DiffractionSet:
    amplitudes: np.ndarray
    coords: np.ndarray
    noise: dict = field(default_factory=lambda: {"kind": "none"})

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=np.float64)
        self.coords = np.asarray(self.coords, dtype=np.float64)
        if np.any(self.amplitudes < 0):
            raise ValueError("amplitudes must be nonnegative")
        if np.any((self.coords < 0) | (self.coords > 1)):
            raise ValueError("coords must lie in [0, 1]")
        if len(self.amplitudes) != len(self.coords):
            raise DimensionError("one coordinate pair per diffraction pattern")

    def __len__(self):
        return len(self.amplitudes)


@dataclass(frozen=True)
class GroundTruthSample:
    image: np.ndarray
    provenance: dict = field(default_factory=dict)


def _check_index(grid, i):
    if not 0 <= i < len(grid):
        raise IndexError(f"scan index {i} out of range for N={len(grid)}")


def extract_patch(x, grid, i):
    """Copy of the ``s x s`` patch of ``x`` at scan location ``i``."""
    _check_index(grid, i)
    r, c = grid.locations[i]
    s = grid.patch_side
    return np.array(x[r:r + s, c:c + s])


def embed_patch(p, grid, i, shape=None):
    """Zero-filled image holding ``p`` at scan location ``i`` (adjoint of extraction)."""
    _check_index(grid, i)
    p = np.asarray(p)
    s = grid.patch_side
    if p.shape != (s, s):
        raise DimensionError(f"patch must be {s}x{s}, got {p.shape}")
    out = np.zeros(shape or grid.shape, dtype=np.result_type(p, np.float64))
    r, c = grid.locations[i]
    out[r:r + s, c:c + s] = p
    return out


def extract_all(x, grid):
    """All patches as an ``(N, s, s)`` stack."""
    x = np.asarray(x)
    if x.shape[-2:] != grid.shape:
        raise DimensionError(f"image {x.shape} does not match grid {grid.shape}")
    rows, cols = grid.index()
    return x[rows, cols]


def embed_all(patches, grid):
    """Sum of all zero-filled patches, the adjoint of :func:`extract_all`.

    Patches are accumulated in scan order so the result is reproducible.
    """
    patches = np.asarray(patches)
    s = grid.patch_side
    if patches.shape != (len(grid), s, s):
        raise DimensionError(f"expected {(len(grid), s, s)}, got {patches.shape}")
    out = np.zeros(grid.shape, dtype=np.result_type(patches, np.float64))
    for (r, c), p in zip(grid.locations, patches):
        out[r:r + s, c:c + s] += p
    return out


def make_scan_grid(image_side, s, n, spacing):
    """Centered sqrt(n) x sqrt(n) raster with the given pixel spacing."""
    k = math.isqrt(n)
    if k * k != n or n < 1:
        raise GeometryError(f"N={n} is not a perfect square")
    span = (k - 1) * spacing + s
    if span > image_side or s < 1:
        raise GeometryError(
            f"pattern {n}:{spacing} with patch {s} spans {span} px "
            f"but the image side is {image_side}"
        )
    start = (image_side - span) // 2
    offs = start + spacing * np.arange(k)
    locs = np.array([(r, c) for r in offs for c in offs], dtype=np.int64)
    return ScanGrid(locs, s, image_side, (n, spacing))


def make_probe(kind, s, seed=0):
    """Synthetic probe of side ``s``.

    Kind ``"A"`` is a circular aperture of radius ``0.35 s`` with a quadratic
    phase. Kind ``"B"`` is an annulus with radii ``0.15 s`` and ``0.4 s`` and a
    linear plus quadratic phase. The seed jitters the phase coefficients by a
    few percent.
    """
    if s < 4:
        raise ValueError("probe side must be at least 4")
    kind = kind.upper()
    rng = np.random.default_rng([seed, ord(kind[0])])
    jitter = 1.0 + 0.05 * rng.uniform(-1, 1, size=3)
    c = (s - 1) / 2.0
    yy, xx = np.mgrid[0:s, 0:s].astype(np.float64)
    dy, dx = (yy - c) / s, (xx - c) / s
    rho2 = dx**2 + dy**2
    r = np.sqrt(rho2)
    if kind == "A":
        mag = (r <= 0.35).astype(np.float64)
        phase = 6.0 * jitter[0] * rho2
    elif kind == "B":
        mag = ((r >= 0.15) & (r <= 0.4)).astype(np.float64)
        # taper toward the outer rim
        mag *= 0.6 + 0.4 * np.cos(np.pi * (r - 0.15) / 0.5)
        phase = 2.0 * np.pi * (0.4 * jitter[1] * dx - 0.25 * jitter[2] * dy) - 9.0 * jitter[0] * rho2
    else:
        raise ValueError(f"unknown probe kind {kind!r}")
    return Probe(mag * np.exp(1j * phase), kind)


def forward_amplitudes(x, probe, grid):
    """Noise-free amplitudes ``|fft2(P * D_i x)|`` as an ``(N, s, s)`` stack."""
    if probe.side != grid.patch_side:
        raise DimensionError(f"probe side {probe.side} != patch side {grid.patch_side}")
    return np.abs(fft2(probe.grid * extract_all(x, grid)))


def detect_poisson(amplitudes, r_p, seed=0, coords=None, scope="global"):
    """Photon-counting detector.

    Intensities are scaled so the brightest pixel has mean ``r_p`` counts,
    Poisson counts are drawn, and the result is mapped back to amplitude
    units. ``scope="pattern"`` normalizes each pattern by its own maximum.
    ``r_p = inf`` returns the amplitudes unchanged.

    Returns
    -------
    DiffractionSet
    """
    amplitudes = np.asarray(amplitudes, dtype=np.float64)
    if coords is None:
        coords = np.full((len(amplitudes), 2), 0.5)
    if math.isinf(r_p) and r_p > 0:
        return DiffractionSet(amplitudes.copy(), coords, {"kind": "none"})
    if not r_p > 0:
        raise ValueError(f"peak photon rate must be positive, got {r_p}")
    intensity = amplitudes**2
    if scope == "global":
        imax = np.full((len(intensity),) + (1,) * (intensity.ndim - 1), intensity.max())
    elif scope == "pattern":
        imax = intensity.reshape(len(intensity), -1).max(axis=1)
        imax = imax.reshape((-1,) + (1,) * (intensity.ndim - 1))
    else:
        raise ValueError(f"unknown max scope {scope!r}")
    safe = np.where(imax > 0, imax, 1.0)
    rng = np.random.default_rng(seed)
    counts = rng.poisson(intensity * (r_p / safe))
    out = np.sqrt(counts * (safe / r_p))
    noise = {
        "kind": "poisson",
        "r_p": float(r_p),
        "seed": int(seed),
        "scope": scope,
        "rescale": float(imax.max() / r_p),
    }
    return DiffractionSet(out, coords, noise)


def simulate(x, probe, grid, r_p=NOISE_FREE, seed=0, scope="global"):
    """Forward model plus detector for one image."""
    return detect_poisson(forward_amplitudes(x, probe, grid), r_p, seed, grid.coords, scope)


def lambda_map(probe, grid, kappa):
    """``sum_i D_i^T |P|^kappa`` as an image-sized real map."""
    if kappa < 0:
        raise ValueError("kappa must be nonnegative")
    a = np.abs(probe.grid)
    # 0**0 == 1 so kappa = 0 counts every footprint pixel
    w = a**kappa
    return embed_all(np.broadcast_to(w, (len(grid),) + w.shape), grid)


def coverage_mask(probe, grid):
    """Pixels illuminated by at least one probe position."""
    lam = lambda_map(probe, grid, 2)
    return lam > 1e-12 * lam.max()


def data_fidelity(x, data, probe, grid, sigma=1.0, eps=0.0):
    """``sum_i ||y_i - |F P D_i x|||^2 / (2 sigma^2)``."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    y = data.amplitudes if isinstance(data, DiffractionSet) else np.asarray(data)
    m = fft2(probe.grid * extract_all(x, grid))
    if m.shape != y.shape:
        raise DimensionError(f"model {m.shape} vs data {y.shape}")
    r = y - abs_eps(m, eps)
    return float(np.sum(r * r) / (2.0 * sigma * sigma))
