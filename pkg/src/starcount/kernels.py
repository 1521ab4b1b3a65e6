"""Backend selection for the inner sampling kernels.

The compiled extension is used when it imports; otherwise the NumPy
reference implementation is used. Set ``STARCOUNT_PURE_PYTHON=1`` to force
the fallback.
"""
import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("STARCOUNT_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels

ln_normal_prob = _impl.ln_normal_prob
truncnorm_icdf = _impl.truncnorm_icdf
tilted_proposals = _impl.tilted_proposals
gibbs_box = _impl.gibbs_box

__all__ = ["BACKEND", "ln_normal_prob", "truncnorm_icdf", "tilted_proposals", "gibbs_box"]
