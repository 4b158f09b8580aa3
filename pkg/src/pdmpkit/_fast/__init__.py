"""Hot loops for the gene model, compiled when available.

The Cython extension ``_ckernels`` is used if it imports; otherwise the
numpy implementation in ``_pykernels`` takes over.  Set
``PDMPKIT_BACKEND=python`` to force the fallback.
"""
import os

from . import _pykernels as python_backend

compiled_backend = None
if os.environ.get("PDMPKIT_BACKEND", "").lower() != "python":
    try:
        from . import _ckernels as compiled_backend
    except ImportError:  # extension not built
        compiled_backend = None

backend = compiled_backend if compiled_backend is not None else python_backend
BACKEND = "cython" if compiled_backend is not None else "python"

__all__ = ["backend", "BACKEND", "python_backend", "compiled_backend"]
