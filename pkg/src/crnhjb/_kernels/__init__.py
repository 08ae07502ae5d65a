"""Numerical hot loops with a compiled backend and a numpy fallback.

The Cython extension ``_ckernels`` is used when it was built; otherwise the
pure-Python module ``_pykernels`` is selected at import.  ``use_backend``
switches explicitly (benchmarks and the cross-backend tests rely on it).
"""

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

NAMES = ("perron", "crn_eval", "crn_legendre", "sl_sweep", "doubling_argmax")
BACKEND = ""


def available() -> list[str]:
    return ["python"] + (["cython"] if _ckernels is not None else [])


def use_backend(name: str) -> None:
    global BACKEND
    if name == "cython":
        if _ckernels is None:
            raise RuntimeError("compiled kernels are not built")
        mod = _ckernels
    elif name == "python":
        mod = _pykernels
    else:
        raise ValueError(f"unknown backend {name!r}")
    g = globals()
    for n in NAMES:
        g[n] = getattr(mod, n)
    BACKEND = name


def get(name: str, backend: str | None = None):
    """Fetch a kernel from a specific backend without switching globally."""
    if backend is None:
        return globals()[name]
    mod = {"python": _pykernels, "cython": _ckernels}[backend]
    if mod is None:
        raise RuntimeError("compiled kernels are not built")
    return getattr(mod, name)


crn_tilted = _pykernels.crn_tilted
OK, MAXITER, STALLED, OVERFLOW = _pykernels.OK, _pykernels.MAXITER, _pykernels.STALLED, _pykernels.OVERFLOW
REDUCIBLE = _pykernels.REDUCIBLE
EXP_LIMIT = _pykernels.EXP_LIMIT

use_backend("cython" if _ckernels is not None else "python")
