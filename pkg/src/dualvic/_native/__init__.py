"""Backend selection for the dynamics kernels.

The compiled Cython extension is preferred when present; the pure numpy
reference implementation is the fallback. `DUALVIC_BACKEND=python|compiled`
forces a choice at import time.
"""

import os

from . import reference

try:
    from . import _kernels as compiled
except ImportError:
    compiled = None

_BACKENDS = {"python": reference}
if compiled is not None:
    _BACKENDS["compiled"] = compiled

_requested = os.environ.get("DUALVIC_BACKEND", "").strip().lower()
if _requested in ("python", "reference"):
    active = reference
elif _requested in ("compiled", "cython", "native"):
    if compiled is None:
        raise ImportError(
            "DUALVIC_BACKEND requested the compiled backend but the extension "
            "is not built; run `pip install -e . --no-build-isolation`"
        )
    active = compiled
elif _requested:
    raise ImportError(f"unknown DUALVIC_BACKEND value {_requested!r}")
else:
    active = compiled if compiled is not None else reference


def get_backend(name=None):
    """Resolve a backend by name ('python' | 'compiled'); None = active."""
    if name is None:
        return active
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(f"backend {name!r} not available (have {sorted(_BACKENDS)})") from None


def available_backends():
    return sorted(_BACKENDS)


def backend_name():
    return active.NAME
