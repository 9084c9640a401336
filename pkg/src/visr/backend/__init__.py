"""Kernel backend selection.

Two interchangeable implementations of the sequential hot loops (integrate-
and-fire scan, LSTM recurrence, depthwise FIR, edit-distance DP):

* ``visr.backend._kernels`` — compiled Cython extension, built by setup.py;
* ``visr.backend.kernels_py`` — pure numpy fallback, always available.

The compiled one is used when importable. Set ``VISR_BACKEND=py`` to force
the fallback or ``VISR_BACKEND=ext`` to require the extension (ImportError
if it was not built). Both expose identical signatures and bit-compatible
float64 results, which tests/test_backend_parity.py checks.
"""

from __future__ import annotations

import os

from visr.backend import kernels_py as _py

_choice = os.environ.get("VISR_BACKEND", "auto").strip().lower()
if _choice not in ("auto", "ext", "py"):
    raise ValueError(f"VISR_BACKEND must be auto, ext or py, got {_choice!r}")

_impl = None
if _choice in ("auto", "ext"):
    try:
        from visr.backend import _kernels as _impl  # type: ignore[no-redef]
    except ImportError:
        if _choice == "ext":
            raise ImportError(
                "VISR_BACKEND=ext but the compiled extension is unavailable; "
                "build it with `pip install -e .` or use VISR_BACKEND=py"
            ) from None
if _impl is None:
    _impl = _py

BACKEND_NAME: str = _impl.BACKEND_NAME

cif_forward = _impl.cif_forward
cif_backward = _impl.cif_backward
lstm_forward = _impl.lstm_forward
lstm_backward = _impl.lstm_backward
dfsmn_forward = _impl.dfsmn_forward
dfsmn_backward = _impl.dfsmn_backward
levenshtein_ops = _impl.levenshtein_ops

OP_MATCH = _py.OP_MATCH
OP_SUB = _py.OP_SUB
OP_DEL = _py.OP_DEL
OP_INS = _py.OP_INS

__all__ = [
    "BACKEND_NAME",
    "cif_forward", "cif_backward",
    "lstm_forward", "lstm_backward",
    "dfsmn_forward", "dfsmn_backward",
    "levenshtein_ops",
    "OP_MATCH", "OP_SUB", "OP_DEL", "OP_INS",
]
