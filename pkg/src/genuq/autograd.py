"""Reverse-mode automatic differentiation over dense float64 arrays.

A Tensor either is a leaf (holds data, optionally trainable) or was produced by
an op, in which case it keeps references to its parents and a closure that maps
the output cotangent to parent cotangents. backward() walks the recorded graph
in reverse topological order and accumulates gradients into leaf .grad buffers.

Conventions that matter elsewhere:
  - everything is float64; complex data lives in a trailing axis of size 2
    holding (real, imaginary) channels, produced by rfft and consumed by
    complex_mul / irfft;
  - |x|^p-style ops (pow_scalar with p < 1, sqrt) use subgradient 0 exactly at
    x == 0 and count the event, so gradient checks can exclude kink points;
  - a non-finite scalar output raises immediately; full per-op finiteness
    validation is enabled with debug_checks(True) (tests) and off in the
    training hot loop where the per-step loss check covers blowups.
"""

import contextlib
import math

import numpy as np

from . import kernels

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)

_debug_checks = False
_kink_hits = 0


@contextlib.contextmanager
def debug_checks(on=True):
    """Validate finiteness of every op output inside the context."""
    global _debug_checks
    old = _debug_checks
    _debug_checks = on
    try:
        yield
    finally:
        _debug_checks = old


def kink_hits():
    return _kink_hits


def reset_kink_hits():
    global _kink_hits
    old = _kink_hits
    _kink_hits = 0
    return old


def _note_kinks(count):
    global _kink_hits
    _kink_hits += count


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._vjp = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        tag = "leaf" if self._vjp is None else "op"
        return f"Tensor(shape={self.data.shape}, {tag}, grad={self.requires_grad})"

    # numpy-ish sugar for the common binary ops
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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, vjp):
    if _debug_checks and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite values in op output")
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
    return out


def _unbroadcast(grad, shape):
    """Sum a cotangent down to `shape` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# arithmetic primitives


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _result(data, (a, b), vjp)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    data = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _result(data, (a, b), vjp)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    data = a.data * b.data

    def vjp(g):
        ga = _unbroadcast(g * b.data, a.data.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.data.shape) if b.requires_grad else None
        return ga, gb

    return _result(data, (a, b), vjp)


def neg(a):
    a = as_tensor(a)
    return _result(-a.data, (a,), lambda g: (-g,))


def pow_scalar(x, p):
    """x ** p for a python-float exponent p > 0.

    At x == 0 with p < 1 the derivative is unbounded; the subgradient 0 is used
    and the event is counted at graph-build time for kink reporting.
    """
    if not p > 0:
        raise ValueError("exponent must be positive")
    x = as_tensor(x)
    data = x.data**p
    zero = None
    if p < 1.0 and x.requires_grad:
        zero = x.data == 0.0
        nz = int(np.count_nonzero(zero))
        if nz:
            _note_kinks(nz)
        else:
            zero = None

    def vjp(g):
        if zero is not None:
            safe = np.where(zero, 1.0, x.data)
            d = np.where(zero, 0.0, safe ** (p - 1.0))
        else:
            d = x.data ** (p - 1.0)
        return (g * (p * d),)

    return _result(data, (x,), vjp)


def sqrt(x):
    x = as_tensor(x)
    data = np.sqrt(x.data)
    zero = None
    if x.requires_grad:
        zero = data == 0.0
        nz = int(np.count_nonzero(zero))
        if nz:
            _note_kinks(nz)
        else:
            zero = None

    def vjp(g):
        if zero is not None:
            inv = np.where(zero, 0.0, 0.5 / np.where(zero, 1.0, data))
        else:
            inv = 0.5 / data
        return (g * inv,)

    return _result(data, (x,), vjp)


def matmul(a, b):
    """Matrix product with leading batch dimensions broadcast numpy-style.

    Both operands must be at least 2-D (no implicit vector promotion).
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands must be at least 2-D")
    data = np.matmul(a.data, b.data)

    def vjp(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.data.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.data.shape)
        return ga, gb

    return _result(data, (a, b), vjp)


def _axis_tuple(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum_(x, axis=None, keepdims=False):
    x = as_tensor(x)
    data = x.data.sum(axis=axis, keepdims=keepdims)
    axes = _axis_tuple(axis, x.ndim)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.data.shape),)

    return _result(data, (x,), vjp)


def mean_(x, axis=None, keepdims=False):
    x = as_tensor(x)
    axes = _axis_tuple(axis, x.ndim)
    count = 1
    for ax in axes:
        count *= x.data.shape[ax]
    data = x.data.mean(axis=axis, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.data.shape) / count,)

    return _result(data, (x,), vjp)


# ---------------------------------------------------------------------------
# shape ops


def reshape(x, shape):
    x = as_tensor(x)
    old = x.data.shape
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose_last(x):
    """Swap the last two axes."""
    x = as_tensor(x)
    data = np.swapaxes(x.data, -1, -2)
    return _result(data, (x,), lambda g: (np.swapaxes(g, -1, -2),))


def concat(parts, axis=-1):
    parts = [as_tensor(p) for p in parts]
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _result(data, tuple(parts), vjp)


def narrow(x, axis, start, length):
    """Contiguous slice [start, start+length) along `axis`."""
    x = as_tensor(x)
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)
    data = x.data[index].copy()

    def vjp(g):
        gx = np.zeros_like(x.data)
        gx[index] = g
        return (gx,)

    return _result(data, (x,), vjp)


def index_select(x, idx, axis=0):
    x = as_tensor(x)
    idx = np.asarray(idx, dtype=np.intp)
    data = np.take(x.data, idx, axis=axis)

    def vjp(g):
        gx = np.zeros_like(x.data)
        # scatter-add through a view so repeated indices accumulate
        np.add.at(np.moveaxis(gx, axis, 0), idx, np.moveaxis(g, axis, 0))
        return (gx,)

    return _result(data, (x,), vjp)


def assemble_params(gen, theta, mask_idx):
    """Overlay hyper-network outputs on a deterministic parameter vector.

    gen: (n_draws, S) values for the masked coordinates; theta: (M,) base
    vector; mask_idx: (S,) sorted unique indices. Returns (n_draws, M) where
    masked columns come from gen and the rest replicate theta. theta receives
    no gradient at masked coordinates (they are overwritten, not added to).
    """
    gen, theta = as_tensor(gen), as_tensor(theta)
    mask_idx = np.asarray(mask_idx, dtype=np.intp)
    n = gen.data.shape[0]
    data = np.repeat(theta.data[None, :], n, axis=0)
    data[:, mask_idx] = gen.data

    def vjp(g):
        g_gen = g[:, mask_idx].copy() if gen.requires_grad else None
        g_theta = None
        if theta.requires_grad:
            g_theta = g.sum(axis=0)
            g_theta[mask_idx] = 0.0
        return g_gen, g_theta

    return _result(data, (gen, theta), vjp)


# ---------------------------------------------------------------------------
# activations


def gelu(x):
    """x * Phi(x) with Phi the exact standard normal CDF (erf form)."""
    x = as_tensor(x)
    data, phi = kernels.gelu_fwd(x.data)

    def vjp(g):
        return (kernels.gelu_bwd(x.data, phi, g),)

    return _result(data, (x,), vjp)


def exp(x):
    x = as_tensor(x)
    data = np.exp(x.data)
    return _result(data, (x,), lambda g: (g * data,))


def elu(x):
    """Unit-scale ELU: x for x >= 0, exp(x) - 1 below."""
    x = as_tensor(x)
    neg_branch = x.data < 0
    data = np.where(neg_branch, np.expm1(x.data), x.data)

    def vjp(g):
        return (g * np.where(neg_branch, data + 1.0, 1.0),)

    return _result(data, (x,), vjp)


def hardsigmoid(x):
    """clamp((x + 3) / 6, 0, 1); derivative 1/6 strictly inside (-3, 3)."""
    x = as_tensor(x)
    data = np.clip((x.data + 3.0) / 6.0, 0.0, 1.0)

    def vjp(g):
        return (g * ((np.abs(x.data) < 3.0) / 6.0),)

    return _result(data, (x,), vjp)


# ---------------------------------------------------------------------------
# spectral ops: real FFT with (real, imag) stored as a trailing axis of size 2


def rfft(x):
    """Real FFT along the last axis; returns (..., n//2 + 1, 2).

    The backward transform is the conjugate-transpose (adjoint) map, expressed
    through irfft with the interior bins halved.
    """
    x = as_tensor(x)
    n = x.data.shape[-1]
    c = np.fft.rfft(x.data, axis=-1)
    data = np.stack([c.real, c.imag], axis=-1)
    # bins that fold a conjugate partner: all but DC, and but Nyquist when n even
    folded = slice(1, -1) if n % 2 == 0 else slice(1, None)

    def vjp(g):
        gc = g[..., 0] + 1j * g[..., 1]
        gc[..., folded] *= 0.5
        return (n * np.fft.irfft(gc, n=n, axis=-1),)

    return _result(data, (x,), vjp)


def irfft(y, n):
    """Inverse real FFT of (..., n//2 + 1, 2) channels back to (..., n).

    Imaginary parts of the DC bin (and the Nyquist bin when n is even) are
    ignored since they have no real-signal counterpart, and their cotangents
    are exactly zero.
    """
    y = as_tensor(y)
    if y.data.shape[-1] != 2 or y.data.shape[-2] != n // 2 + 1:
        raise ValueError("expected (..., n//2 + 1, 2) spectral channels")
    c = y.data[..., 0] + 1j * y.data[..., 1]
    data = np.fft.irfft(c, n=n, axis=-1)
    has_nyquist = n % 2 == 0

    def vjp(g):
        spec = np.fft.rfft(g, axis=-1)
        re = (2.0 / n) * spec.real
        im = (2.0 / n) * spec.imag
        re[..., 0] *= 0.5
        im[..., 0] = 0.0
        if has_nyquist:
            re[..., -1] *= 0.5
            im[..., -1] = 0.0
        return (np.stack([re, im], axis=-1),)

    return _result(data, (y,), vjp)


def complex_mul(a, b):
    """Elementwise complex product of (..., 2) channel tensors (broadcasts)."""
    a, b = as_tensor(a), as_tensor(b)
    ar, ai = a.data[..., 0], a.data[..., 1]
    br, bi = b.data[..., 0], b.data[..., 1]
    data = np.stack([ar * br - ai * bi, ar * bi + ai * br], axis=-1)

    def vjp(g):
        gr, gi = g[..., 0], g[..., 1]
        ga = gb = None
        if a.requires_grad:
            ga = np.stack([gr * br + gi * bi, -gr * bi + gi * br], axis=-1)
            ga = _unbroadcast(ga, a.data.shape)
        if b.requires_grad:
            gb = np.stack([gr * ar + gi * ai, -gr * ai + gi * ar], axis=-1)
            gb = _unbroadcast(gb, b.data.shape)
        return ga, gb

    return _result(data, (a, b), vjp)


# ---------------------------------------------------------------------------
# graph execution


def backward(out):
    """Accumulate d(out)/d(leaf) into .grad over the recorded graph.

    `out` must be scalar; a non-finite value here is an error state regardless
    of the debug_checks setting.
    """
    if out.data.ndim != 0:
        raise ValueError("backward expects a scalar output")
    if not np.isfinite(out.data):
        raise FloatingPointError("non-finite scalar output")

    topo = []
    visited = {id(out)}
    stack = [(out, iter(out._parents))]
    while stack:
        node, it = stack[-1]
        advanced = False
        for parent in it:
            if id(parent) in visited or not parent.requires_grad:
                continue
            visited.add(id(parent))
            stack.append((parent, iter(parent._parents)))
            advanced = True
            break
        if not advanced:
            topo.append(node)
            stack.pop()

    out.grad = np.ones((), dtype=np.float64)
    for node in reversed(topo):
        if node._vjp is None or node.grad is None:
            continue
        grads = node._vjp(node.grad)
        for parent, g in zip(node._parents, grads):
            if g is None or not parent.requires_grad:
                continue
            if parent.grad is None:
                parent.grad = g
            else:
                parent.grad = parent.grad + g


class GradCheck:
    def __init__(self, max_rel_err, n_checked, n_excluded):
        self.max_rel_err = max_rel_err
        self.n_checked = n_checked
        self.n_excluded = n_excluded

    def __repr__(self):
        return (
            f"GradCheck(max_rel_err={self.max_rel_err:.3e}, "
            f"n_checked={self.n_checked}, n_excluded={self.n_excluded})"
        )


def check_gradient_directional(fn, params, n_dirs=8, h=1e-5, seed=0):
    """Compare <grad, r> against central differences along random directions.

    Deep graphs make per-coordinate relative errors meaningless wherever a
    single coordinate's gradient is near zero; projecting onto random unit
    directions keeps the compared quantities at the gradient's own scale
    while still detecting any wrong vjp (an error cannot hide from random
    projections). Directions that trigger a non-differentiable event are
    excluded, mirroring check_gradient.
    """
    for p in params:
        p.zero_grad()
    reset_kink_hits()
    out = fn()
    base_kinks = reset_kink_hits()
    backward(out)
    analytic = [
        np.zeros_like(p.data) if p.grad is None else np.array(p.grad, copy=True)
        for p in params
    ]
    rng = np.random.default_rng(seed)
    originals = [np.array(p.data, copy=True) for p in params]

    max_rel = 0.0
    n_checked = 0
    n_excluded = 0
    for _ in range(n_dirs):
        dirs = [rng.standard_normal(p.data.shape) for p in params]
        norm = math.sqrt(sum(float((d * d).sum()) for d in dirs))
        dirs = [d / norm for d in dirs]
        ana = sum(float((a * d).sum()) for a, d in zip(analytic, dirs))
        kinked = bool(base_kinks)
        vals = []
        for sign in (1.0, -1.0):
            for p, o, d in zip(params, originals, dirs):
                p.data[...] = o + sign * h * d
            reset_kink_hits()
            vals.append(float(fn().data))
            kinked = kinked or bool(reset_kink_hits())
        for p, o in zip(params, originals):
            p.data[...] = o
        if kinked:
            n_excluded += 1
            continue
        numeric = (vals[0] - vals[1]) / (2.0 * h)
        rel = abs(ana - numeric) / max(abs(ana), abs(numeric), 1e-10)
        max_rel = max(max_rel, rel)
        n_checked += 1
    return GradCheck(max_rel, n_checked, n_excluded)


def check_gradient(fn, params, h=1e-6, coords=None):
    """Compare analytic gradients of fn() against central differences.

    fn: zero-argument callable rebuilding the scalar graph from `params`
    (leaf Tensors with requires_grad). Checks every scalar coordinate, or the
    per-parameter index lists in `coords`. Relative error uses
    max(|analytic|, |numeric|, 1e-12) as denominator. Coordinates whose
    evaluations hit a non-differentiable point (|x|^p at exactly 0) are
    reported via n_excluded instead of entering the error maximum.
    """
    for p in params:
        p.zero_grad()
    reset_kink_hits()
    out = fn()
    base_kinks = reset_kink_hits()
    backward(out)
    analytic = [
        np.zeros_like(p.data) if p.grad is None else np.array(p.grad, copy=True)
        for p in params
    ]

    def value_and_kinks():
        reset_kink_hits()
        v = float(fn().data)
        return v, reset_kink_hits()

    max_rel = 0.0
    n_checked = 0
    n_excluded = 0
    for pi, p in enumerate(params):
        flat = p.data.reshape(-1)
        gflat = analytic[pi].reshape(-1)
        index_list = range(flat.size) if coords is None else coords[pi]
        for i in index_list:
            orig = flat[i]
            flat[i] = orig + h
            fp, kp = value_and_kinks()
            flat[i] = orig - h
            fm, km = value_and_kinks()
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * h)
            if base_kinks or kp or km:
                n_excluded += 1
                continue
            a = gflat[i]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-12)
            max_rel = max(max_rel, rel)
            n_checked += 1
    return GradCheck(max_rel, n_checked, n_excluded)
