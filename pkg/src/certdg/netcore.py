"""Dense feedforward representation network ``g`` with a linear head ``h``.

Everything here is plain numpy with hand-written reverse mode.  A model is a
:class:`ModelParams`: a stack of dense layers producing the representation
``z = g(x)`` followed by the linear classifier ``logits = W z + b``.

Batches are row-major: ``X`` has shape ``(n, d)``, ``Z`` has shape ``(n, m)``
and labels ``y`` are integer arrays of shape ``(n,)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InvalidArgument, UnsupportedLoss

ACTIVATIONS = ("relu", "identity")
CHECKPOINT_FORMAT = "certdg-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class Layer:
    W: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)
    activation: str = "relu"

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        if self.activation not in ACTIVATIONS:
            raise InvalidArgument(f"unknown activation {self.activation!r}")
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise InvalidArgument(
                f"layer shapes W{self.W.shape} and b{self.b.shape} are incompatible")


@dataclass
class ModelParams:
    """Representation layers plus the linear classification head."""

    layers: list[Layer]
    head_W: np.ndarray  # (C, m)
    head_b: np.ndarray  # (C,)

    def __post_init__(self):
        self.head_W = np.asarray(self.head_W, dtype=float)
        self.head_b = np.asarray(self.head_b, dtype=float)
        self.validate()

    def validate(self):
        if not self.layers:
            raise InvalidArgument("a model needs at least one representation layer")
        for prev, nxt in zip(self.layers[:-1], self.layers[1:]):
            if prev.W.shape[0] != nxt.W.shape[1]:
                raise InvalidArgument(
                    f"layer output {prev.W.shape[0]} does not feed input {nxt.W.shape[1]}")
        if self.head_W.ndim != 2 or self.head_W.shape[1] != self.rep_dim:
            raise InvalidArgument(
                f"head expects dimension {self.head_W.shape[-1]}, representation is {self.rep_dim}")
        if self.head_b.shape != (self.head_W.shape[0],):
            raise InvalidArgument("head bias does not match the number of classes")
        for arr in self.arrays():
            if not np.all(np.isfinite(arr)):
                raise InvalidArgument("model parameters must be finite")

    @property
    def input_dim(self) -> int:
        return self.layers[0].W.shape[1]

    @property
    def rep_dim(self) -> int:
        return self.layers[-1].W.shape[0]

    @property
    def n_classes(self) -> int:
        return self.head_W.shape[0]

    @property
    def head(self) -> tuple[np.ndarray, np.ndarray]:
        return self.head_W, self.head_b

    def arrays(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend([layer.W, layer.b])
        out.extend([self.head_W, self.head_b])
        return out

    def copy(self) -> "ModelParams":
        return ModelParams(
            [Layer(l.W.copy(), l.b.copy(), l.activation) for l in self.layers],
            self.head_W.copy(), self.head_b.copy())

    def zeros_like(self) -> "ModelParams":
        return ModelParams(
            [Layer(np.zeros_like(l.W), np.zeros_like(l.b), l.activation) for l in self.layers],
            np.zeros_like(self.head_W), np.zeros_like(self.head_b))


def init_params(input_dim: int, n_classes: int, hidden: Sequence[int] = (16, 16),
                rep_dim: int = 2, rng=None) -> ModelParams:
    """He-initialised relu stack; the representation layer itself is linear."""
    rng = np.random.default_rng(rng)
    sizes = [input_dim, *hidden, rep_dim]
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        act = "relu" if i < len(sizes) - 2 else "identity"
        W = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_out, fan_in))
        layers.append(Layer(W, np.zeros(fan_out), act))
    head_W = rng.normal(0.0, np.sqrt(1.0 / rep_dim), size=(n_classes, rep_dim))
    return ModelParams(layers, head_W, np.zeros(n_classes))


# ---------------------------------------------------------------------------
# dense stacks
# ---------------------------------------------------------------------------

def mlp_forward(layers: Sequence[Layer], X: np.ndarray):
    """Forward pass through ``layers``; returns the output and a cache for backprop."""
    cache = []
    h = X
    for layer in layers:
        pre = h @ layer.W.T + layer.b
        cache.append((h, pre))
        h = np.maximum(pre, 0.0) if layer.activation == "relu" else pre
    return h, cache


def mlp_backward(layers: Sequence[Layer], cache, d_out: np.ndarray):
    """Reverse-mode pass.  Returns ``([(dW, db), ...], dX)`` for an upstream gradient."""
    grads = [None] * len(layers)
    g = d_out
    for i in range(len(layers) - 1, -1, -1):
        layer = layers[i]
        h_in, pre = cache[i]
        if layer.activation == "relu":
            g = g * (pre > 0)
        grads[i] = (g.T @ h_in, g.sum(axis=0))
        g = g @ layer.W
    return grads, g


def _as_batch(x, dim, what="input"):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != dim:
        raise InvalidArgument(f"{what} has dimension {X.shape[-1]}, expected {dim}")
    return X, single


def forward_rep(params: ModelParams, x) -> np.ndarray:
    """Representation ``g(x)`` for one point ``(d,)`` or a batch ``(n, d)``."""
    X, single = _as_batch(x, params.input_dim)
    Z, _ = mlp_forward(params.layers, X)
    return Z[0] if single else Z


def logits(head, Z) -> np.ndarray:
    W, b = head
    return np.asarray(Z, dtype=float) @ W.T + b


def predict(params: ModelParams, X) -> np.ndarray:
    return np.argmax(logits(params.head, forward_rep(params, X)), axis=-1)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LossFamily:
    name: str
    alpha: float = 0.1  # slope of the modified hinge past the margin

    def __post_init__(self):
        if self.name not in ("cross_entropy", "modified_hinge", "zero_one"):
            raise UnsupportedLoss(f"unknown loss family {self.name!r}")
        if self.name == "modified_hinge" and not self.alpha > 0:
            raise InvalidArgument("modified hinge needs alpha > 0")

    @property
    def differentiable(self) -> bool:
        return self.name != "zero_one"


CROSS_ENTROPY = LossFamily("cross_entropy")
MODIFIED_HINGE = LossFamily("modified_hinge")
ZERO_ONE = LossFamily("zero_one")

_ALIASES = {"ce": "cross_entropy", "hinge": "modified_hinge", "01": "zero_one", "0/1": "zero_one"}


def as_family(family) -> LossFamily:
    if isinstance(family, LossFamily):
        return family
    if isinstance(family, str):
        return LossFamily(_ALIASES.get(family, family))
    raise UnsupportedLoss(f"cannot interpret {family!r} as a loss family")


def _labels(y, n, n_classes):
    y = np.broadcast_to(np.asarray(y), (n,)).astype(np.int64)
    if np.any(y < 0) or np.any(y >= n_classes):
        raise InvalidArgument(f"labels must lie in [0, {n_classes})")
    return y


def _margin_parts(L, y):
    """Margin ``t = logit_y - max_{k != y} logit_k`` and the runner-up class."""
    n = L.shape[0]
    rows = np.arange(n)
    masked = L.copy()
    masked[rows, y] = -np.inf
    k_star = np.argmax(masked, axis=1)  # lowest index on ties
    return L[rows, y] - masked[rows, k_star], k_star


def loss_parts(head, Z, y, family):
    """Per-sample losses and ``dloss/dlogits`` (zeros for the 0/1 family).

    The representation gradient of sample ``i`` is ``dlogits[i] @ W``.
    """
    fam = as_family(family)
    W, b = head
    Z = np.asarray(Z, dtype=float)
    if Z.ndim != 2 or Z.shape[1] != W.shape[1]:
        raise InvalidArgument(f"representation has shape {Z.shape}, head expects dim {W.shape[1]}")
    n, C = Z.shape[0], W.shape[0]
    y = _labels(y, n, C)
    rows = np.arange(n)
    L = Z @ W.T + b
    dlogits = np.zeros_like(L)
    if fam.name == "cross_entropy":
        shift = L.max(axis=1, keepdims=True)
        e = np.exp(L - shift)
        s = e.sum(axis=1, keepdims=True)
        losses = (np.log(s[:, 0]) + shift[:, 0]) - L[rows, y]
        dlogits = e / s
        dlogits[rows, y] -= 1.0
    elif fam.name == "modified_hinge":
        t, k_star = _margin_parts(L, y)
        losses = np.maximum(0.0, 1.0 - t) - fam.alpha * np.maximum(0.0, t - 1.0)
        # right-derivative at the kink t = 1
        dl_dt = np.where(t < 1.0, -1.0, -fam.alpha)
        dlogits[rows, y] += dl_dt
        dlogits[rows, k_star] -= dl_dt
    else:
        losses = (np.argmax(L, axis=1) != y).astype(float)
    return losses, dlogits


def loss(head, z, y, family="cross_entropy"):
    """Loss of one representation (returns a float) or a batch (returns an array)."""
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    losses, _ = loss_parts(head, z[None, :] if single else z, y, family)
    return float(losses[0]) if single else losses


def grad_loss_z(head, z, y, family="cross_entropy") -> np.ndarray:
    """Analytic ``dloss/dz`` per sample.  The 0/1 loss has no useful gradient."""
    fam = as_family(family)
    if not fam.differentiable:
        raise UnsupportedLoss("the zero_one loss has no gradient")
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    _, dlogits = loss_parts(head, z[None, :] if single else z, y, fam)
    g = dlogits @ head[0]
    return g[0] if single else g


def head_grads(Z, dlogits, weights=None):
    """Gradients of ``sum_i w_i loss_i`` with respect to the head ``(W, b)``."""
    if weights is not None:
        dlogits = dlogits * np.asarray(weights)[:, None]
    return dlogits.T @ Z, dlogits.sum(axis=0)


def backward_rep(params: ModelParams, X, dZ, cache=None):
    """Push an upstream representation gradient ``dZ`` through ``g``.

    Returns ``(layer_grads, dX)`` where ``layer_grads`` is a list of ``(dW, db)``.
    """
    if cache is None:
        _, cache = mlp_forward(params.layers, np.asarray(X, dtype=float))
    return mlp_backward(params.layers, cache, dZ)


def backward(params: ModelParams, X, y, family="cross_entropy"):
    """Exact gradients of the mean batch loss.  Returns ``(grads, mean_loss)``."""
    fam = as_family(family)
    if not fam.differentiable:
        raise UnsupportedLoss("the zero_one loss has no gradient")
    X, _ = _as_batch(X, params.input_dim)
    if X.shape[0] == 0:
        raise InvalidArgument("backward needs a non-empty batch")
    n = X.shape[0]
    Z, cache = mlp_forward(params.layers, X)
    losses, dlogits = loss_parts(params.head, Z, y, fam)
    dlogits = dlogits / n
    dW, db = head_grads(Z, dlogits)
    layer_grads, _ = mlp_backward(params.layers, cache, dlogits @ params.head_W)
    grads = ModelParams(
        [Layer(gw, gb, l.activation) for (gw, gb), l in zip(layer_grads, params.layers)],
        dW, db)
    return grads, float(losses.mean())


def input_grad(params: ModelParams, X, y, family="cross_entropy") -> np.ndarray:
    """Per-sample ``dloss/dx`` through the whole network."""
    X, single = _as_batch(X, params.input_dim)
    Z, cache = mlp_forward(params.layers, X)
    _, dlogits = loss_parts(params.head, Z, y, family)
    _, dX = mlp_backward(params.layers, cache, dlogits @ params.head_W)
    return dX[0] if single else dX


def sgd_update(params: ModelParams, grads: ModelParams, lr: float) -> ModelParams:
    """Return ``params - lr * grads`` as a new object."""
    if lr < 0:
        raise InvalidArgument("learning rate must be non-negative")
    p_arrays, g_arrays = params.arrays(), grads.arrays()
    if len(p_arrays) != len(g_arrays) or any(
            p.shape != g.shape for p, g in zip(p_arrays, g_arrays)):
        raise InvalidArgument("gradient shapes do not match the parameters")
    new = [p - lr * g for p, g in zip(p_arrays, g_arrays)]
    layers = [Layer(new[2 * i], new[2 * i + 1], l.activation)
              for i, l in enumerate(params.layers)]
    return ModelParams(layers, new[-2], new[-1])


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def params_to_dict(params: ModelParams) -> dict:
    return {
        "layers": [{"W": l.W.tolist(), "b": l.b.tolist(), "activation": l.activation}
                   for l in params.layers],
        "head_W": params.head_W.tolist(),
        "head_b": params.head_b.tolist(),
    }


def params_from_dict(d: dict) -> ModelParams:
    try:
        layers = [Layer(np.array(l["W"], dtype=float).reshape(len(l["W"]), -1),
                        np.array(l["b"], dtype=float), l["activation"]) for l in d["layers"]]
        return ModelParams(layers, np.array(d["head_W"], dtype=float),
                           np.array(d["head_b"], dtype=float))
    except (KeyError, TypeError) as exc:
        raise InvalidArgument(f"malformed model record: {exc}") from exc


def checkpoint_text(params: ModelParams, extra: dict | None = None) -> str:
    """JSON checkpoint record.  Floats use ``repr`` so the round trip is exact."""
    record = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION,
              "model": params_to_dict(params)}
    if extra:
        record["extra"] = extra
    return json.dumps(record, indent=1, sort_keys=True) + "\n"


def save_checkpoint(params: ModelParams, path, extra: dict | None = None):
    Path(path).write_text(checkpoint_text(params, extra))


def load_checkpoint(path, with_extra=False):
    record = json.loads(Path(path).read_text())
    if record.get("format") != CHECKPOINT_FORMAT:
        raise InvalidArgument(f"{path} is not a certdg checkpoint")
    if record.get("version") != CHECKPOINT_VERSION:
        raise InvalidArgument(f"unsupported checkpoint version {record.get('version')}")
    params = params_from_dict(record["model"])
    return (params, record.get("extra", {})) if with_extra else params
