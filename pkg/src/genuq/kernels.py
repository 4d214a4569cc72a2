"""Kernel backend selection.

Tries the compiled extension first and falls back to the numpy implementations.
Everything downstream calls through this module, so the two backends are
interchangeable at runtime (used by tests and benchmarks/bench_kernels.py).
"""

from . import _kernels_np

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

_active = _compiled if _compiled is not None else _kernels_np


def backend_name():
    return "compiled" if _active is _compiled else "numpy"


def available_backends():
    return ("compiled", "numpy") if _compiled is not None else ("numpy",)


def use_backend(name):
    """Switch kernel backend ("compiled" or "numpy"). Returns the old name."""
    global _active
    old = backend_name()
    if name == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not available")
        _active = _compiled
    elif name == "numpy":
        _active = _kernels_np
    else:
        raise ValueError(f"unknown backend {name!r}")
    return old


def gelu_fwd(x):
    return _active.gelu_fwd(x)


def gelu_bwd(x, phi, g):
    return _active.gelu_bwd(x, phi, g)


def pairwise_rho(a, b, beta):
    return _active.pairwise_rho(a, b, beta)
