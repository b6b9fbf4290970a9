"""Pooling kernel selection: compiled extension when available, numpy
fallback otherwise. Set PARTPOOL_PURE=1 to force the fallback."""

import os

from . import _search_py

if os.environ.get("PARTPOOL_PURE") == "1":
    _impl = _search_py
else:
    try:
        from . import _search_cy as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _search_py

IMPL = _impl.IMPL
pool_search = _impl.pool_search
pool_fixed = _impl.pool_fixed
scatter_fixed = _impl.scatter_fixed
