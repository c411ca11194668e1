"""Kernel selection: the compiled extension when importable, else pure Python.

Set ``LILEYMAP_PURE_PYTHON=1`` to force the fallback.
"""
from __future__ import annotations

import os

from lileymap import _pykernels

python_kernels = _pykernels

if os.environ.get("LILEYMAP_PURE_PYTHON", "") not in ("", "0"):
    compiled_kernels = None
    _impl = _pykernels
else:
    try:
        from lileymap import _ckernels as compiled_kernels
        _impl = compiled_kernels
    except ImportError:  # extension not built
        compiled_kernels = None
        _impl = _pykernels

IMPLEMENTATION = _impl.IMPLEMENTATION
sigmoid = _impl.sigmoid
rhs = _impl.rhs
jac = _impl.jac
integrate = _impl.integrate
integrate_variational = _impl.integrate_variational
simulate_em = _impl.simulate_em
