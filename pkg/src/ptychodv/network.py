"""PtychoDV: a transformer over diffraction tokens followed by unrolled WF + CNN refinement."""

from dataclasses import asdict, dataclass, field
import math

import numpy as np

from . import autodiff as ad
from .physics import DiffractionSet
from .solvers import wf_step_size


@dataclass
class ViTConfig:
    d: int = 64
    depth: int = 4
    heads: int = 4
    mlp_ratio: int = 2
    l_f: int = 10
    patch_side: int = 8

    def __post_init__(self):
        if (2 * self.d) % self.heads:
            raise ValueError("token width 2*d must be divisible by heads")
        if self.l_f < 0 or self.depth < 0:
            raise ValueError("l_f and depth must be >= 0")


@dataclass
class ModelConfig:
    vit: ViTConfig = field(default_factory=ViTConfig)
    k: int = 3
    cnn_width: int = 32
    cnn_kernel: int = 3
    eps: float = 1e-8
    share_phi: bool = True

    def __post_init__(self):
        if isinstance(self.vit, dict):
            self.vit = ViTConfig(**self.vit)
        if self.k < 0:
            raise ValueError("K must be >= 0")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _linear_init(rng, fan_in, fan_out):
    return rng.standard_normal((fan_in, fan_out)) / math.sqrt(fan_in)


def _conv_init(rng, cout, cin, k, gain=1.0):
    return gain * rng.standard_normal((cout, cin, k, k)) * math.sqrt(2.0 / (cin * k * k))


def init_params(cfg, seed=0):
    """Fresh parameter dict ``name -> float64 array`` for ``cfg``."""
    rng = np.random.default_rng(seed)
    v = cfg.vit
    d, w, s2 = v.d, 2 * v.d, v.patch_side**2
    hidden = v.mlp_ratio * w
    p = {}

    def lin(name, fi, fo):
        p[f"{name}.w"] = _linear_init(rng, fi, fo)
        p[f"{name}.b"] = np.zeros(fo)

    def ln(name, n):
        p[f"{name}.g"] = np.ones(n)
        p[f"{name}.b"] = np.zeros(n)

    lin("meas.0", s2, d)
    lin("meas.1", d, d)
    lin("pos.0", 4 * (v.l_f + 1), d)
    lin("pos.1", d, d)
    for j in range(v.depth):
        ln(f"blk{j}.ln1", w)
        for q in "qkvo":
            lin(f"blk{j}.attn.{q}", w, w)
        ln(f"blk{j}.ln2", w)
        lin(f"blk{j}.mlp.0", w, hidden)
        lin(f"blk{j}.mlp.1", hidden, w)
    ln("head.ln", w)
    lin("head.0", w, w)
    lin("head.1", w, 2 * s2)
    p["head.1.w"] *= 0.5
    nets = [""] if cfg.share_phi else [str(k) for k in range(cfg.k)]
    c, kk = cfg.cnn_width, cfg.cnn_kernel
    for tag in nets:
        p[f"cnn{tag}.0.w"] = _conv_init(rng, c, 2, kk)
        # positive bias keeps zero-padded regions off the ReLU kink
        p[f"cnn{tag}.0.b"] = np.full(c, 0.01)
        p[f"cnn{tag}.1.w"] = _conv_init(rng, c, c, kk)
        p[f"cnn{tag}.1.b"] = np.full(c, 0.01)
        # small last layer: h_phi starts close to the identity
        p[f"cnn{tag}.2.w"] = _conv_init(rng, 2, c, kk, gain=0.1)
        p[f"cnn{tag}.2.b"] = np.zeros(2)
    return p


def positional_encode(c, l_f):
    """Fourier features ``[sin(2^l pi c), cos(2^l pi c)]`` for l = 0..l_f.

    ``c`` is ``(2,)`` or ``(N, 2)`` in [0, 1]. Output length is ``4 (l_f + 1)``,
    grouped per coordinate.
    """
    c = np.asarray(c, dtype=np.float64)
    if np.any((c < 0) | (c > 1)):
        raise ValueError("coordinates must lie in [0, 1]")
    freq = np.pi * 2.0 ** np.arange(l_f + 1)
    ang = c[..., :, None] * freq  # (..., 2, l_f+1)
    feats = np.stack([np.sin(ang), np.cos(ang)], axis=-1)  # (..., 2, l_f+1, 2)
    return feats.reshape(c.shape[:-1] + (4 * (l_f + 1),))


def _dense(x, P, name):
    return ad.matmul(x, P[f"{name}.w"]) + P[f"{name}.b"]


def _mlp2(x, P, name, act=ad.gelu):
    return _dense(act(_dense(x, P, f"{name}.0")), P, f"{name}.1")


def _mhsa(x, P, name, heads):
    n, w = x.shape
    dh = w // heads

    def split(t):
        return ad.transpose(ad.reshape(t, (n, heads, dh)), (1, 0, 2))

    q = split(_dense(x, P, f"{name}.q"))
    k = split(_dense(x, P, f"{name}.k"))
    v = split(_dense(x, P, f"{name}.v"))
    att = ad.softmax(ad.scale(ad.matmul(q, ad.transpose(k, (0, 2, 1))), 1.0 / math.sqrt(dh)))
    out = ad.reshape(ad.transpose(ad.matmul(att, v), (1, 0, 2)), (n, w))
    return _dense(out, P, f"{name}.o")


def vit_block(x, P, j, heads):
    """Pre-norm transformer block on ``(N, width)`` tokens."""
    x = x + _mhsa(ad.layer_norm(x, P[f"blk{j}.ln1.g"], P[f"blk{j}.ln1.b"]), P, f"blk{j}.attn", heads)
    return x + _mlp2(ad.layer_norm(x, P[f"blk{j}.ln2.g"], P[f"blk{j}.ln2.b"]), P, f"blk{j}.mlp")


def vit_forward(tape, P, cfg, data):
    """Map diffraction amplitudes to ``(N, 2, s, s)`` complex patches."""
    y = data.amplitudes
    n, s = y.shape[0], cfg.patch_side
    if y.shape[1:] != (s, s):
        raise ad.DimensionError(f"model expects {s}x{s} patterns, got {y.shape[1:]}")
    meas = _mlp2(tape.const(y.reshape(n, s * s)), P, "meas")
    pos = _mlp2(tape.const(positional_encode(data.coords, cfg.l_f)), P, "pos")
    x = ad.concat([meas, pos], axis=-1)
    for j in range(cfg.depth):
        x = vit_block(x, P, j, cfg.heads)
    x = ad.layer_norm(x, P["head.ln.g"], P["head.ln.b"])
    out = _mlp2(x, P, "head")
    return ad.reshape(out, (n, 2, s, s))


def stitch_weights(grid):
    c = grid.counts()
    return np.divide(1.0, c, out=np.zeros_like(c), where=c > 0)


def stitch(patches, grid):
    """Count-averaged overlay of ``(N, 2, s, s)`` patches; zero where uncovered."""
    return ad.mul(ad.scatter_patch(patches, grid), stitch_weights(grid))


def wf_step(x, y, probe, grid, gamma, eps):
    """Differentiable ``x - gamma * WF-gradient(x)`` on a ``(2, H, W)`` image."""
    m = ad.fft2_linear(ad.complex_mul_const(ad.gather_patch(x, grid), probe.grid))
    r = m - ad.mul(ad.complex_phase_unit_eps(m, eps), y[:, None])
    g = ad.complex_mul_const(ad.ifft2_linear(r), np.conj(probe.grid))
    return x - ad.scale(ad.scatter_patch(g, grid), gamma)


def refiner(x, P, tag=""):
    """Residual 3-layer CNN ``h_phi``."""
    h = ad.relu(ad.conv2d(x, P[f"cnn{tag}.0.w"], P[f"cnn{tag}.0.b"]))
    h = ad.relu(ad.conv2d(h, P[f"cnn{tag}.1.w"], P[f"cnn{tag}.1.b"]))
    return x + ad.conv2d(h, P[f"cnn{tag}.2.w"], P[f"cnn{tag}.2.b"])


def du_forward(x0, P, gamma, data, probe, grid, k, eps=1e-8, share_phi=True):
    """K unrolled iterations of WF step followed by ``h_phi``."""
    y = data.amplitudes if isinstance(data, DiffractionSet) else np.asarray(data)
    x = x0
    for it in range(k):
        x = refiner(wf_step(x, y, probe, grid, gamma, eps), P, "" if share_phi else str(it))
    return x


class PtychoDV:
    """Parameter bundle plus architecture for the full network."""

    def __init__(self, cfg=None, params=None, seed=0):
        self.cfg = cfg or ModelConfig()
        self.params = params if params is not None else init_params(self.cfg, seed)

    def bind(self, tape):
        return {k: tape.param(v, k) for k, v in self.params.items()}

    def forward(self, tape, data, probe, grid, k=None, bound=None):
        """Return ``(image Var (2, H, W), patches Var (N, 2, s, s))``."""
        P = bound if bound is not None else self.bind(tape)
        patches = vit_forward(tape, P, self.cfg.vit, data)
        x0 = stitch(patches, grid)
        k = self.cfg.k if k is None else k
        gamma = wf_step_size(probe, grid)
        xk = du_forward(x0, P, gamma, data, probe, grid, k, self.cfg.eps, self.cfg.share_phi)
        return xk, patches

    def reconstruct(self, data, probe, grid, k=None):
        """Inference without gradient recording; returns a complex image."""
        tape = ad.Tape(record=False)
        xk, _ = self.forward(tape, data, probe, grid, k)
        return ad.from_planes(xk.value)

    def vit_patches(self, data):
        tape = ad.Tape(record=False)
        return ad.from_planes(vit_forward(tape, self.bind(tape), self.cfg.vit, data).value)


def model_forward(tape, model, data, probe, grid):
    return model.forward(tape, data, probe, grid)


def loss(xk, patches, x, grid, lam=1.0, mask=None):
    """``||xk - x||^2 (over mask) + lam * sum_i ||xhat_i - x_i||^2``.

    ``mask`` defaults to the scan footprint; pixels no patch touches carry
    no information and are left out of the image term.
    """
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    tape = xk.tape
    target = ad.to_planes(x)
    if mask is None:
        mask = grid.counts() > 0
    diff = ad.mul(xk - target, np.asarray(mask, dtype=np.float64))
    img = ad.sum_sq(diff)
    rows, cols = grid.index()
    tp = np.moveaxis(target[:, rows, cols], 0, 1)
    pat = ad.sum_sq(patches - tp)
    if lam == 0:
        return img
    return img + ad.scale(pat, lam)
