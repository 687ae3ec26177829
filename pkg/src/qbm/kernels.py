"""Kernel dispatch: compiled extension when importable, numpy otherwise.

Set ``QBM_KERNELS=python`` to force the numpy fallback, or
``QBM_KERNELS=compiled`` to make a missing extension an import error.
"""

import os

from . import _kernels_py

_choice = os.environ.get("QBM_KERNELS", "auto").lower()

if _choice == "python":
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:
        if _choice == "compiled":
            raise
        _impl = _kernels_py

BACKEND = "python" if _impl is _kernels_py else "compiled"

spin_table = _impl.spin_table
ising_diagonal = _impl.ising_diagonal
add_transverse = _impl.add_transverse
loewner_exp = _impl.loewner_exp
flip_traces = _impl.flip_traces
