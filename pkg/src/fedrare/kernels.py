"""Backend selection for the embedding-bag kernels.

The compiled extension is used when importable; set ``FEDRARE_PURE_PYTHON=1``
to force the numpy fallback.
"""
import os

MEAN, DECAY = 0, 1

if os.environ.get("FEDRARE_PURE_PYTHON", "") not in ("", "0"):
    from fedrare import _pykernels as _impl
    BACKEND = "python"
else:
    try:
        from fedrare import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:
        from fedrare import _pykernels as _impl
        BACKEND = "python"

pool = _impl.pool
predict_proba = _impl.predict_proba
loss_grad = _impl.loss_grad


def backends():
    """Both kernel modules that can be loaded, keyed by name."""
    from fedrare import _pykernels
    found = {"python": _pykernels}
    try:
        from fedrare import _ckernels
        found["cython"] = _ckernels
    except ImportError:
        pass
    return found
