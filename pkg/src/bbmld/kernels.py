"""Backend selection: compiled core if importable, numpy fallback otherwise.

Set ``BBMLD_FORCE_PURE=1`` to force the fallback (used by the benchmark and
the cross-backend tests).
"""
import os

if os.environ.get("BBMLD_FORCE_PURE", "") not in ("", "0"):
    from . import _purepy as _impl

    BACKEND = "python"
else:
    try:
        from . import _core as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        from . import _purepy as _impl

        BACKEND = "python"

grow = _impl.grow
summarize = _impl.summarize
two_levy = _impl.two_levy
ndtri = _impl.ndtri
