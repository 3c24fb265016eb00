"""Tape-based reverse-mode automatic differentiation on float64 numpy arrays.

Complex fields travel as two real planes on axis ``-3`` (``[re, im]``), so an
image is ``(2, H, W)`` and a patch stack ``(N, 2, s, s)``.

Every primitive computes its value eagerly and, when any input needs a
gradient, appends a node with a vector-Jacobian closure to the tape. The
backward pass walks the tape in exact reverse recording order, so repeated
calls give identical gradients.
"""

import math

import numpy as np

from .tensor import DimensionError


class GraphError(RuntimeError):
    """Raised for malformed backward requests."""


class ContractError(ValueError):
    """Raised when a caller violates an operation's preconditions."""


class Var:
    __slots__ = ("value", "tape", "id", "requires_grad", "name", "parents", "vjp")

    def __init__(self, value, tape, requires_grad=False, name=None, parents=(), vjp=None):
        self.value = value
        self.tape = tape
        self.requires_grad = requires_grad
        self.name = name
        self.parents = parents
        self.vjp = vjp
        self.id = tape._next_id()

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(id={self.id}, shape={self.shape}, name={self.name!r})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Recording of one forward pass.

    ``record=False`` builds no graph at all; use it for inference.
    """

    def __init__(self, record=True):
        self.record = record
        self.nodes = []
        self._count = 0

    def _next_id(self):
        self._count += 1
        return self._count - 1

    def param(self, value, name=None):
        if not self.record:
            return Var(np.asarray(value, dtype=np.float64), self, False, name)
        v = Var(np.array(value, dtype=np.float64), self, True, name)
        if self.record:
            self.nodes.append(v)
        return v

    def const(self, value):
        return Var(np.asarray(value, dtype=np.float64), self, False)


def _tape_of(*xs):
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    raise ContractError("at least one operand must be a Var")


def _as_var(x, tape):
    if isinstance(x, Var):
        if x.tape is not tape:
            raise GraphError("operands live on different tapes")
        return x
    return tape.const(x)


def _node(tape, value, parents, vjp):
    needs = tape.record and any(p.requires_grad for p in parents)
    if not needs:
        return Var(value, tape, False)
    v = Var(value, tape, True, None, parents, vjp)
    tape.nodes.append(v)
    return v


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_broadcast(a, b):
    if a.shape == b.shape:
        return
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"cannot broadcast {a.shape} with {b.shape}") from None


# -- arithmetic --------------------------------------------------------------

def add(a, b):
    t = _tape_of(a, b)
    a, b = _as_var(a, t), _as_var(b, t)
    _check_broadcast(a.value, b.value)
    sa, sb = a.shape, b.shape
    return _node(t, a.value + b.value, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    t = _tape_of(a, b)
    a, b = _as_var(a, t), _as_var(b, t)
    _check_broadcast(a.value, b.value)
    sa, sb = a.shape, b.shape
    return _node(t, a.value - b.value, (a, b),
                 lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b):
    t = _tape_of(a, b)
    a, b = _as_var(a, t), _as_var(b, t)
    _check_broadcast(a.value, b.value)
    av, bv = a.value, b.value
    return _node(t, av * bv, (a, b),
                 lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def scale(a, c):
    c = float(c)
    return _node(a.tape, a.value * c, (a,), lambda g: (g * c,))


def matmul(a, b):
    """Batched matrix product following ``numpy.matmul`` broadcasting."""
    t = _tape_of(a, b)
    a, b = _as_var(a, t), _as_var(b, t)
    av, bv = a.value, b.value
    if av.ndim < 2 or bv.ndim < 2 or av.shape[-1] != bv.shape[-2]:
        raise DimensionError(f"matmul shapes {av.shape} and {bv.shape}")

    def vjp(g):
        ga = g @ np.swapaxes(bv, -1, -2)
        gb = np.swapaxes(av, -1, -2) @ g
        return _unbroadcast(ga, av.shape), _unbroadcast(gb, bv.shape)

    return _node(t, av @ bv, (a, b), vjp)


# -- shape ops ---------------------------------------------------------------

def reshape(a, shape):
    old = a.shape
    try:
        out = a.value.reshape(shape)
    except ValueError as e:
        raise DimensionError(str(e)) from None
    return _node(a.tape, out, (a,), lambda g: (g.reshape(old),))


def transpose(a, axes):
    inv = np.argsort(axes)
    return _node(a.tape, np.transpose(a.value, axes), (a,), lambda g: (np.transpose(g, inv),))


def concat(xs, axis=-1):
    t = _tape_of(*xs)
    xs = [_as_var(x, t) for x in xs]
    try:
        out = np.concatenate([x.value for x in xs], axis=axis)
    except ValueError as e:
        raise DimensionError(str(e)) from None
    splits = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return _node(t, out, tuple(xs), lambda g: tuple(np.split(g, splits, axis=axis)))


def slice_(a, index):
    """Basic (non-fancy) indexing."""
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape)
        out[index] = g
        return (out,)

    return _node(a.tape, a.value[index], (a,), vjp)


# -- reductions --------------------------------------------------------------

def sum_(a):
    shape = a.shape
    return _node(a.tape, np.array(a.value.sum()), (a,), lambda g: (np.full(shape, float(g)),))


def mean(a):
    shape, n = a.shape, a.value.size
    return _node(a.tape, np.array(a.value.mean()), (a,), lambda g: (np.full(shape, float(g) / n),))


def sum_sq(a):
    av = a.value
    return _node(a.tape, np.array(np.sum(av * av)), (a,), lambda g: (2.0 * float(g) * av,))


# -- nonlinearities ----------------------------------------------------------

def relu(a):
    out = np.maximum(a.value, 0.0)
    return _node(a.tape, out, (a,), lambda g: (g * (out > 0),))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a):
    """GELU, tanh approximation."""
    x = a.value
    x2 = x * x
    th = np.tanh(_GELU_C * x * (1.0 + 0.044715 * x2))
    out = 0.5 * x * (1.0 + th)

    def vjp(g):
        d = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * _GELU_C * (1.0 + 3 * 0.044715 * x2)
        return (g * d,)

    return _node(a.tape, out, (a,), vjp)


def softmax(a):
    """Softmax over the last axis."""
    z = a.value - a.value.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)
    return _node(a.tape, s, (a,), lambda g: (s * (g - np.sum(g * s, axis=-1, keepdims=True)),))


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalize over the last axis, then apply ``gain * xhat + bias``."""
    t = _tape_of(x, gain, bias)
    x, gain, bias = _as_var(x, t), _as_var(gain, t), _as_var(bias, t)
    xv = x.value
    mu = xv.mean(axis=-1, keepdims=True)
    xc = xv - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gain.value + bias.value

    def vjp(g):
        gx = g * gain.value
        dx = inv * (gx - gx.mean(axis=-1, keepdims=True)
                    - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        return dx, _unbroadcast(g * xhat, gain.shape), _unbroadcast(g, bias.shape)

    return _node(t, out, (x, gain, bias), vjp)


# -- convolution -------------------------------------------------------------

def _im2col(x, k):
    """``(B, C, H, W)`` -> zero-padded patch columns ``(B, C*k*k, H*W)``."""
    b, c, h, w = x.shape
    p = k // 2
    xp = np.zeros((b, c, h + 2 * p, w + 2 * p))
    xp[:, :, p:p + h, p:p + w] = x
    cols = np.empty((b, c, k, k, h, w))
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i:i + h, j:j + w]
    return cols.reshape(b, c * k * k, h * w)


def conv2d(x, w, b):
    """Same-padded stride-1 2-D convolution (cross-correlation).

    ``x`` is ``(C, H, W)`` or ``(B, C, H, W)``; ``w`` is ``(O, C, k, k)`` with
    odd ``k``; ``b`` is ``(O,)``.
    """
    t = _tape_of(x, w, b)
    x, w, b = _as_var(x, t), _as_var(w, t), _as_var(b, t)
    xv, wv = x.value, w.value
    if wv.ndim != 4 or wv.shape[-1] != wv.shape[-2] or wv.shape[-1] % 2 == 0:
        raise DimensionError(f"kernel must be (O, C, k, k) with odd k, got {wv.shape}")
    squeeze = xv.ndim == 3
    xb = xv[None] if squeeze else xv
    if xb.ndim != 4 or xb.shape[1] != wv.shape[1]:
        raise DimensionError(f"input {xv.shape} does not match kernel {wv.shape}")
    nb, _, h, wd = xb.shape
    o, k = wv.shape[0], wv.shape[-1]
    cols = _im2col(xb, k)
    out = np.matmul(wv.reshape(o, -1), cols).reshape(nb, o, h, wd)
    out += b.value[None, :, None, None]
    if squeeze:
        out = out[0]

    def vjp(g):
        g4 = (g[None] if squeeze else g).reshape(nb, o, h * wd)
        gw = np.matmul(g4, np.swapaxes(cols, 1, 2)).sum(axis=0).reshape(wv.shape)
        wflip = np.flip(wv, axis=(2, 3)).transpose(1, 0, 2, 3)
        gx = np.matmul(np.ascontiguousarray(wflip).reshape(wv.shape[1], -1),
                       _im2col(g4.reshape(nb, o, h, wd), k)).reshape(xb.shape)
        return (gx[0] if squeeze else gx), gw, g4.sum(axis=(0, 2))

    return _node(t, out, (x, w, b), vjp)


# -- complex planes ----------------------------------------------------------

def to_planes(z):
    """Complex array -> real array with a new ``[re, im]`` axis at -3."""
    z = np.asarray(z)
    out = np.empty(z.shape[:-2] + (2,) + z.shape[-2:])
    out[..., 0, :, :] = z.real
    out[..., 1, :, :] = z.imag
    return out


def from_planes(a):
    a = np.asarray(a)
    return a[..., 0, :, :] + 1j * a[..., 1, :, :]


def _check_planes(a):
    if a.value.ndim < 3 or a.shape[-3] != 2:
        raise DimensionError(f"expected a [re, im] axis at -3, got {a.shape}")


def complex_mul_const(a, c):
    """Multiply complex planes by a fixed complex array ``c`` (broadcast over H, W)."""
    _check_planes(a)
    c = np.asarray(c, dtype=np.complex128)
    z = from_planes(a.value) * c
    cc = np.conj(c)
    return _node(a.tape, to_planes(z), (a,), lambda g: (to_planes(from_planes(g) * cc),))


def _smooth_mod(av, eps):
    re, im = av[..., 0, :, :], av[..., 1, :, :]
    return np.sqrt(re * re + im * im + eps * eps)


def complex_abs_eps(a, eps=1e-8):
    """``sqrt(re^2 + im^2 + eps^2)``; drops the plane axis."""
    _check_planes(a)
    av = a.value
    n = _smooth_mod(av, eps)
    return _node(a.tape, n, (a,), lambda g: (av * (g / n)[..., None, :, :],))


def complex_phase_unit_eps(a, eps=1e-8):
    """``z / sqrt(|z|^2 + eps^2)`` on complex planes."""
    _check_planes(a)
    av = a.value
    n = _smooth_mod(av, eps)[..., None, :, :]
    u = av / n

    def vjp(g):
        dot = np.sum(av * g, axis=-3, keepdims=True)
        return (g / n - av * dot / n**3,)

    return _node(a.tape, u, (a,), vjp)


def fft2_linear(a):
    """Unitary 2-D FFT of complex planes; backward applies the inverse FFT."""
    _check_planes(a)
    out = to_planes(np.fft.fft2(from_planes(a.value), norm="ortho"))
    return _node(a.tape, out, (a,),
                 lambda g: (to_planes(np.fft.ifft2(from_planes(g), norm="ortho")),))


def ifft2_linear(a):
    """Unitary 2-D inverse FFT of complex planes; backward applies the FFT."""
    _check_planes(a)
    out = to_planes(np.fft.ifft2(from_planes(a.value), norm="ortho"))
    return _node(a.tape, out, (a,),
                 lambda g: (to_planes(np.fft.fft2(from_planes(g), norm="ortho")),))


# -- patch operators ---------------------------------------------------------

def _scatter(patches, grid, shape):
    out = np.zeros(shape)
    s = grid.patch_side
    for (r, c), p in zip(grid.locations, patches):
        out[..., r:r + s, c:c + s] += p
    return out


def gather_patch(img, grid):
    """``(C, H, W)`` image -> ``(N, C, s, s)`` patch stack."""
    if img.value.ndim != 3 or img.shape[-2:] != grid.shape:
        raise DimensionError(f"image {img.shape} does not match grid {grid.shape}")
    rows, cols = grid.index()
    out = np.ascontiguousarray(np.moveaxis(img.value[:, rows, cols], 0, 1))
    shape = img.shape
    return _node(img.tape, out, (img,), lambda g: (_scatter(g, grid, shape),))


def scatter_patch(patches, grid):
    """Adjoint of :func:`gather_patch`: sum zero-filled patches into ``(C, H, W)``."""
    s = grid.patch_side
    if patches.value.ndim != 4 or patches.shape[0] != len(grid) or patches.shape[-2:] != (s, s):
        raise DimensionError(f"patches {patches.shape} do not match grid")
    shape = (patches.shape[1],) + grid.shape
    out = _scatter(patches.value, grid, shape)
    rows, cols = grid.index()
    return _node(patches.tape, out, (patches,),
                 lambda g: (np.ascontiguousarray(np.moveaxis(g[:, rows, cols], 0, 1)),))


# -- backward ----------------------------------------------------------------

def backward(tape, loss, wrt=None):
    """Gradients of a scalar ``loss`` with respect to the tape's parameters.

    Parameters
    ----------
    tape : Tape
    loss : Var
        Scalar-shaped output recorded on ``tape``.
    wrt : iterable of Var, optional
        Restrict the result to these leaves.

    Returns
    -------
    dict
        Parameter name (or node id when unnamed) -> gradient array.
    """
    if loss.tape is not tape:
        raise GraphError("loss was not recorded on this tape")
    if loss.value.size != 1:
        raise ContractError(f"loss must be scalar, got shape {loss.shape}")
    leaves = [n for n in tape.nodes if n.vjp is None] if wrt is None else list(wrt)
    for v in leaves:
        if v.id > loss.id:
            raise GraphError(f"node {v.id} was created after the loss node {loss.id}")
    grads = {}
    if loss.requires_grad:
        grads[loss.id] = np.ones_like(loss.value)
        for node in reversed(tape.nodes):
            if node.id > loss.id or node.vjp is None:
                continue
            g = grads.pop(node.id, None)
            if g is None:
                continue
            for p, gp in zip(node.parents, node.vjp(g)):
                if not p.requires_grad:
                    continue
                if p.id in grads:
                    grads[p.id] = grads[p.id] + gp
                else:
                    grads[p.id] = gp
    out = {}
    for v in leaves:
        key = v.name if v.name is not None else v.id
        out[key] = grads.get(v.id, np.zeros_like(v.value))
    return out


def _rel_err(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


def grad_check(f, x, step=1e-5):
    """Max relative error between backward and central differences.

    ``f`` maps a :class:`Var` to a scalar :class:`Var`.
    """
    return grad_check_params(lambda tape, p: f(p["x"]), {"x": x}, step)


def grad_check_params(f, params, step=1e-5, max_coords=None, seed=0):
    """Like :func:`grad_check` for ``f(tape, {name: Var})`` over several parameters.

    ``max_coords`` bounds the number of coordinates probed per parameter
    (chosen with a seeded RNG).
    """
    if not step > 0:
        raise ContractError("step must be positive")
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}

    def evaluate(vals):
        t = Tape(record=False)
        out = f(t, {k: t.param(v, k) for k, v in vals.items()})
        val = float(out.value)
        if not math.isfinite(val):
            raise FloatingPointError("objective is not finite")
        return val

    tape = Tape()
    pv = {k: tape.param(v, k) for k, v in params.items()}
    loss = f(tape, pv)
    if not math.isfinite(float(loss.value)):
        raise FloatingPointError("objective is not finite")
    grads = backward(tape, loss, pv.values())
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k, v in params.items():
        idx = np.arange(v.size)
        if max_coords is not None and v.size > max_coords:
            idx = rng.choice(v.size, size=max_coords, replace=False)
        for j in idx:
            vals = dict(params)
            flat = v.ravel().copy()
            flat[j] += step
            vals[k] = flat.reshape(v.shape)
            fp = evaluate(vals)
            flat[j] -= 2 * step
            vals[k] = flat.reshape(v.shape)
            fm = evaluate(vals)
            fd = (fp - fm) / (2 * step)
            worst = max(worst, _rel_err(grads[k].ravel()[j], fd))
    return worst
