"""Kernel backend selection.

Imports the compiled extension when available, otherwise the numpy
reference implementation.  Set CLVQA_BACKEND=numpy (or =compiled) to force
a choice; forcing "compiled" when the extension is missing raises, forcing
"numpy" always works.  Both backends export the same functions:

    affine_forward, head_forward, act_forward, act_backward,
    affine_backward, sigmoid, bce_soft, adam_step, sgd_step,
    ewc_penalty_grad

plus the activation codes TANH, RELU, IDENTITY and BACKEND_NAME.
"""

import os

from clvqa.kernels import backend_numpy

_choice = os.environ.get("CLVQA_BACKEND", "").strip().lower()

if _choice not in ("", "numpy", "compiled"):
    raise ImportError(
        f"CLVQA_BACKEND={_choice!r} not recognized (use 'numpy' or 'compiled')"
    )

if _choice == "numpy":
    _impl = backend_numpy
else:
    try:
        from clvqa.kernels import _core as _impl
    except ImportError:
        if _choice == "compiled":
            raise
        _impl = backend_numpy

BACKEND_NAME = _impl.BACKEND_NAME
TANH = _impl.TANH
RELU = _impl.RELU
IDENTITY = _impl.IDENTITY

affine_forward = _impl.affine_forward
head_forward = _impl.head_forward
act_forward = _impl.act_forward
act_backward = _impl.act_backward
affine_backward = _impl.affine_backward
sigmoid = _impl.sigmoid
bce_soft = _impl.bce_soft
adam_step = _impl.adam_step
sgd_step = _impl.sgd_step
ewc_penalty_grad = _impl.ewc_penalty_grad


def get_backend(name):
    """Return a backend module by name ('numpy' or 'compiled')."""
    if name == "numpy":
        return backend_numpy
    if name == "compiled":
        from clvqa.kernels import _core

        return _core
    raise ValueError(f"unknown backend {name!r}")
