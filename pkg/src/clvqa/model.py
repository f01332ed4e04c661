"""Float64 MLP with manual backprop and a growable classification head.

The network is: input -> hidden affine+nonlinearity (0 or more layers) ->
head affine producing one logit per known answer class.  Weights are
stored [out, in].  The head can grow rows as new classes appear; logits of
pre-existing classes are unchanged by growth.

Parameters flatten to a single float64 vector with a fixed layout
(hidden0.w, hidden0.b, hidden1.w, ..., head.w, head.b, each row-major),
which is the currency for gradients, optimizers, and the regularization
strategies.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from clvqa import kernels
from clvqa.errors import CheckpointError, ShapeError, TraceError
from clvqa.ioutil import atomic_write_text

ACTIVATIONS = {"tanh": kernels.TANH, "relu": kernels.RELU,
               "identity": kernels.IDENTITY}

CHECKPOINT_FORMAT = "clvqa-model"
CHECKPOINT_VERSION = 1


@dataclass
class ModelState:
    weights: list  # hidden layer weights, each [out, in]
    biases: list  # hidden layer biases, each [out]
    head_w: np.ndarray  # [n_classes, hidden_out]
    head_b: np.ndarray  # [n_classes]
    activation: str = "tanh"

    @property
    def input_dim(self):
        if self.weights:
            return self.weights[0].shape[1]
        return self.head_w.shape[1]

    @property
    def hidden_dims(self):
        return [w.shape[0] for w in self.weights]

    @property
    def n_classes(self):
        return self.head_w.shape[0]

    @property
    def num_params(self):
        n = sum(w.size + b.size for w, b in zip(self.weights, self.biases))
        return n + self.head_w.size + self.head_b.size

    def layout(self):
        """[(name, shape), ...] in flat-vector order."""
        out = []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out.append((f"hidden{i}.w", w.shape))
            out.append((f"hidden{i}.b", b.shape))
        out.append(("head.w", self.head_w.shape))
        out.append(("head.b", self.head_b.shape))
        return out

    def head_param_slice(self):
        """Slice of the flat vector covering head.w and head.b."""
        n = self.num_params
        return slice(n - self.head_w.size - self.head_b.size, n)

    def copy(self):
        return ModelState(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            head_w=self.head_w.copy(),
            head_b=self.head_b.copy(),
            activation=self.activation,
        )


@dataclass
class ActivationTrace:
    """Everything backward() needs: the input batch and each hidden layer's
    post-nonlinearity activations, in forward order."""

    x: np.ndarray
    hidden: list = field(default_factory=list)

    @property
    def batch_size(self):
        return self.x.shape[0]


def init_model(input_dim, hidden_dims, n_classes, activation="tanh",
               head_init="zeros", rng=None):
    """Build a fresh model.

    Hidden weights are N(0, 1/sqrt(fan_in)), biases zero.  The head follows
    head_init: "zeros" (default) or "gaussian" (same fan-in scaling).
    """
    if activation not in ACTIVATIONS:
        raise ShapeError(f"unknown activation {activation!r}")
    if input_dim < 1:
        raise ShapeError(f"input_dim must be >= 1, got {input_dim}")
    if n_classes < 1:
        raise ShapeError(f"n_classes must be >= 1, got {n_classes}")
    if rng is None:
        rng = np.random.default_rng(0)
    weights, biases = [], []
    fan_in = input_dim
    for h in hidden_dims:
        if h < 1:
            raise ShapeError(f"hidden dim must be >= 1, got {h}")
        weights.append(rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(h, fan_in)))
        biases.append(np.zeros(h))
        fan_in = h
    head_w = _init_head_rows(n_classes, fan_in, head_init, rng)
    head_b = np.zeros(n_classes)
    return ModelState(weights, biases, head_w, head_b, activation)


def _init_head_rows(n_rows, fan_in, rule, rng):
    if rule == "zeros":
        return np.zeros((n_rows, fan_in))
    if rule == "gaussian":
        if rng is None:
            raise ShapeError("gaussian head init needs an rng")
        return rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(n_rows, fan_in))
    raise ShapeError(f"unknown head init rule {rule!r}")


def forward(model, x):
    """Returns (logits [B, n_classes], ActivationTrace)."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"input must be 2-D [batch, features], got ndim={x.ndim}")
    if x.shape[1] != model.input_dim:
        raise ShapeError(
            f"input has {x.shape[1]} features, model expects {model.input_dim}"
        )
    kind = ACTIVATIONS[model.activation]
    trace = ActivationTrace(x=x)
    a = x
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = kernels.affine_forward(a, w, b)
        a = kernels.act_forward(z, kind)
        trace.hidden.append(a)
    # head uses the row-stable kernel so grown heads leave old logits
    # bit-identical
    logits = kernels.head_forward(a, model.head_w, model.head_b)
    return logits, trace


def backward(model, trace, dlogits):
    """Backprop dlogits through the model; returns the flat gradient.

    The trace must come from a forward pass of this model (same batch and
    layer shapes), otherwise TraceError.
    """
    dlogits = np.ascontiguousarray(dlogits, dtype=np.float64)
    if dlogits.shape != (trace.batch_size, model.n_classes):
        raise TraceError(
            f"dlogits shape {dlogits.shape} does not match batch "
            f"{trace.batch_size} x {model.n_classes} classes"
        )
    if len(trace.hidden) != len(model.weights):
        raise TraceError(
            f"trace has {len(trace.hidden)} hidden activations, "
            f"model has {len(model.weights)} hidden layers"
        )
    for i, (a, w) in enumerate(zip(trace.hidden, model.weights)):
        if a.shape != (trace.batch_size, w.shape[0]):
            raise TraceError(
                f"trace activation {i} has shape {a.shape}, "
                f"expected {(trace.batch_size, w.shape[0])}"
            )
    kind = ACTIVATIONS[model.activation]
    head_in = trace.hidden[-1] if trace.hidden else trace.x
    da, dw_head, db_head = kernels.affine_backward(head_in, model.head_w, dlogits)
    grads_w = [None] * len(model.weights)
    grads_b = [None] * len(model.weights)
    for i in range(len(model.weights) - 1, -1, -1):
        dz = kernels.act_backward(trace.hidden[i], da, kind)
        layer_in = trace.hidden[i - 1] if i > 0 else trace.x
        da, grads_w[i], grads_b[i] = kernels.affine_backward(
            layer_in, model.weights[i], dz
        )
    parts = []
    for gw, gb in zip(grads_w, grads_b):
        parts.append(gw.ravel())
        parts.append(gb)
    parts.append(dw_head.ravel())
    parts.append(db_head)
    return np.concatenate(parts)


def flatten(model):
    """Copy all parameters into one float64 vector (layout order)."""
    parts = []
    for w, b in zip(model.weights, model.biases):
        parts.append(w.ravel())
        parts.append(b)
    parts.append(model.head_w.ravel())
    parts.append(model.head_b)
    return np.concatenate(parts)


def assign_flat(model, theta):
    """Write a flat vector back into the model's arrays, in place."""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (model.num_params,):
        raise ShapeError(
            f"flat vector has {theta.shape} entries, model has {model.num_params}"
        )
    pos = 0
    for w, b in zip(model.weights, model.biases):
        w[...] = theta[pos : pos + w.size].reshape(w.shape)
        pos += w.size
        b[...] = theta[pos : pos + b.size]
        pos += b.size
    model.head_w[...] = theta[pos : pos + model.head_w.size].reshape(
        model.head_w.shape
    )
    pos += model.head_w.size
    model.head_b[...] = theta[pos:]


def expand_head(model, n_new, init="zeros", rng=None):
    """Append n_new class rows to the head, in place.

    Existing head rows and biases are untouched, so logits for all
    pre-existing classes on any fixed input are bit-identical before and
    after expansion.
    """
    if n_new < 0:
        raise ShapeError(f"cannot add {n_new} classes")
    if n_new == 0:
        return model
    fan_in = model.head_w.shape[1]
    new_rows = _init_head_rows(n_new, fan_in, init, rng)
    model.head_w = np.concatenate([model.head_w, new_rows], axis=0)
    model.head_b = np.concatenate([model.head_b, np.zeros(n_new)])
    return model


def expand_flat(vec, old_layout, new_layout, fill=0.0):
    """Re-embed a flat vector from an old layout into a grown layout.

    Tensors are matched by name; each old tensor must fit in the leading
    slice of its new shape (head growth appends rows).  New coordinates get
    `fill`.  Used to carry optimizer-free state (anchors, Fisher) across
    head expansions.
    """
    old_shapes = dict(old_layout)
    out_parts = []
    pos_old = {}
    pos = 0
    for name, shape in old_layout:
        size = int(np.prod(shape))
        pos_old[name] = (pos, size)
        pos += size
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (pos,):
        raise ShapeError(f"vector has {vec.shape} entries, old layout has {pos}")
    for name, new_shape in new_layout:
        if name not in old_shapes:
            out_parts.append(np.full(int(np.prod(new_shape)), fill))
            continue
        old_shape = old_shapes[name]
        if any(o > n for o, n in zip(old_shape, new_shape)) or len(old_shape) != len(
            new_shape
        ):
            raise ShapeError(
                f"tensor {name}: old shape {old_shape} does not embed in {new_shape}"
            )
        start, size = pos_old[name]
        old_t = vec[start : start + size].reshape(old_shape)
        new_t = np.full(new_shape, fill)
        new_t[tuple(slice(0, s) for s in old_shape)] = old_t
        out_parts.append(new_t.ravel())
    return np.concatenate(out_parts)


def save_checkpoint(model, path, meta=None):
    """Write the model as JSON.  Parameters round-trip exactly (repr floats)."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "activation": model.activation,
        "input_dim": model.input_dim,
        "hidden_dims": model.hidden_dims,
        "n_classes": model.n_classes,
        "params": flatten(model).tolist(),
        "meta": meta or {},
    }
    atomic_write_text(path, json.dumps(doc, sort_keys=True) + "\n")


def load_checkpoint(path):
    """Read a checkpoint; returns (model, meta)."""
    try:
        with open(path, encoding="utf-8") as f:
            doc = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a model checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported checkpoint version {doc.get('version')!r}"
        )
    try:
        model = init_model(
            doc["input_dim"],
            doc["hidden_dims"],
            doc["n_classes"],
            activation=doc["activation"],
        )
        params = np.asarray(doc["params"], dtype=np.float64)
        assign_flat(model, params)
    except (KeyError, TypeError, ValueError, ShapeError) as e:
        raise CheckpointError(f"{path}: malformed checkpoint: {e}") from e
    return model, doc.get("meta", {})
