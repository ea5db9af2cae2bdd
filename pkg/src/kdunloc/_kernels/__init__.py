"""Hot numerical kernels, compiled when available.

The Cython build is preferred; set ``KDUNLOC_PURE_PYTHON=1`` to force the numpy
fallback. ``BACKEND`` names the implementation actually in use.
"""

from __future__ import annotations

import os

from . import _pykernels as python

compiled = None
if not os.environ.get("KDUNLOC_PURE_PYTHON"):
    try:
        from . import _ckernels as compiled  # type: ignore[no-redef]
    except ImportError:
        compiled = None

_impl = compiled if compiled is not None else python
BACKEND = "cython" if compiled is not None else "python"

perplexity_search = _impl.perplexity_search
tsne_grad = _impl.tsne_grad
scaled_manhattan_matrix = _impl.scaled_manhattan_matrix

__all__ = [
    "BACKEND",
    "compiled",
    "perplexity_search",
    "python",
    "scaled_manhattan_matrix",
    "tsne_grad",
]
