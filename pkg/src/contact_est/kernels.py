"""Backend selection for the hot kernels.

The compiled extension ``_kernels`` is used when it imports; otherwise the
numpy implementation in ``_kernels_py`` is used. Setting the environment
variable ``CONTACT_EST_BACKEND=python`` forces the fallback.
"""

from __future__ import annotations

import os

from . import _kernels_py

_requested = os.environ.get("CONTACT_EST_BACKEND", "auto").lower()

compiled = None
if _requested != "python":
    try:
        from . import _kernels as compiled  # type: ignore[no-redef]
    except ImportError:
        if _requested == "compiled":
            raise

_active = compiled if compiled is not None else _kernels_py


BACKEND: str = _active.BACKEND
support_eval = _active.support_eval
pair_eval = _active.pair_eval
growth_solve = _active.growth_solve
pgs_sweep = _active.pgs_sweep
block_solve = _active.block_solve


def available_backends() -> dict:
    out = {"python": _kernels_py}
    if compiled is not None:
        out["compiled"] = compiled
    return out
