"""SGD and Adam on the flat parameter vector.

Optimizers are built against a model's current size and raise if the model
grows under them; the training loop creates a fresh optimizer per task
(the head may have grown between tasks).  Two parameter groups are
supported via lr multipliers: trunk (hidden layers) and head, so the trunk
can run at e.g. lr/10 while the head trains at full rate.
"""

import numpy as np

from clvqa import kernels
from clvqa.errors import NumericError, ShapeError


def _locate(layout, flat_index):
    pos = 0
    for name, shape in layout:
        size = int(np.prod(shape))
        if flat_index < pos + size:
            return name
        pos += size
    return "<past end>"


def _check_finite(grad, layout):
    bad = np.flatnonzero(~np.isfinite(grad))
    if bad.size:
        raise NumericError(
            f"non-finite gradient in {_locate(layout, int(bad[0]))} "
            f"(flat index {int(bad[0])})"
        )


def _scale_vector(model, trunk_lr_scale, head_lr_scale):
    if trunk_lr_scale == 1.0 and head_lr_scale == 1.0:
        return None
    scale = np.full(model.num_params, float(trunk_lr_scale))
    scale[model.head_param_slice()] = float(head_lr_scale)
    return scale


class Sgd:
    def __init__(self, model_state, lr, trunk_lr_scale=1.0, head_lr_scale=1.0):
        self.lr = float(lr)
        self.n_params = model_state.num_params
        self.scale = _scale_vector(model_state, trunk_lr_scale, head_lr_scale)

    def step(self, model_state, grad):
        from clvqa.model import assign_flat, flatten

        if model_state.num_params != self.n_params:
            raise ShapeError(
                "model size changed under the optimizer; build a new one"
            )
        grad = np.ascontiguousarray(grad, dtype=np.float64)
        if grad.shape != (self.n_params,):
            raise ShapeError(f"gradient has shape {grad.shape}, expected "
                             f"({self.n_params},)")
        _check_finite(grad, model_state.layout())
        theta = flatten(model_state)
        kernels.sgd_step(theta, grad, self.lr, self.scale)
        assign_flat(model_state, theta)


class Adam:
    def __init__(self, model_state, lr, beta1=0.9, beta2=0.999, eps=1e-8,
                 trunk_lr_scale=1.0, head_lr_scale=1.0):
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.n_params = model_state.num_params
        self.m = np.zeros(self.n_params)
        self.v = np.zeros(self.n_params)
        self.t = 0
        self.scale = _scale_vector(model_state, trunk_lr_scale, head_lr_scale)

    def step(self, model_state, grad):
        from clvqa.model import assign_flat, flatten

        if model_state.num_params != self.n_params:
            raise ShapeError(
                "model size changed under the optimizer; build a new one"
            )
        grad = np.ascontiguousarray(grad, dtype=np.float64)
        if grad.shape != (self.n_params,):
            raise ShapeError(f"gradient has shape {grad.shape}, expected "
                             f"({self.n_params},)")
        _check_finite(grad, model_state.layout())
        self.t += 1
        theta = flatten(model_state)
        kernels.adam_step(theta, grad, self.m, self.v, self.t, self.lr,
                          self.beta1, self.beta2, self.eps, self.scale)
        assign_flat(model_state, theta)


def make_optimizer(model_state, algo, lr, beta1=0.9, beta2=0.999, eps=1e-8,
                   trunk_lr_scale=1.0, head_lr_scale=1.0):
    if algo == "sgd":
        return Sgd(model_state, lr, trunk_lr_scale, head_lr_scale)
    if algo == "adam":
        return Adam(model_state, lr, beta1, beta2, eps,
                    trunk_lr_scale, head_lr_scale)
    raise ShapeError(f"unknown optimizer {algo!r}")
