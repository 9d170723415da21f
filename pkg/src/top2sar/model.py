"""Miniature residual network with hand-written backprop and Adam.

Layout: an affine stem with relu, ``n_blocks`` residual blocks computing
``x + W2 @ relu(W1 @ x + b1) + b2``, and an affine head producing class
scores.  Parameters are named views (``stem.W``, ``block0.W1``, ``head.b``,
...) into one flat buffer, which lets Adam update everything at once.  Names ending in ``W`` / ``W1`` /
``W2`` are weight matrices; only those are L2-penalized.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from top2sar.metrics import ranked_classes

CHECKPOINT_VERSION = 1


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    width: int
    n_blocks: int
    n_classes: int
    init_seed: int = 0

    def __post_init__(self):
        for name in ("input_dim", "width"):
            if int(getattr(self, name)) < 1:
                raise ModelError(f"{name} must be >= 1")
        if int(self.n_blocks) < 0:
            raise ModelError("n_blocks must be >= 0")
        if int(self.n_classes) < 2:
            raise ModelError("n_classes must be >= 2")
        if not 0 <= int(self.init_seed) < 2**64:
            raise ModelError("init_seed must be a 64-bit unsigned integer")


class Network:
    """Parameters of one network, stored as named views into a single flat buffer."""

    def __init__(self, spec: NetworkSpec, params: dict[str, np.ndarray], frozen=frozenset()):
        self.spec = spec
        self.flat = np.concatenate([np.asarray(v, dtype=np.float64).ravel() for v in params.values()])
        self.params: dict[str, np.ndarray] = {}
        offset = 0
        for k, v in params.items():
            size = np.size(v)
            self.params[k] = self.flat[offset:offset + size].reshape(np.shape(v))
            offset += size
        # parameter names the optimizer must leave untouched
        self.frozen = frozenset(frozen)

    def copy(self) -> "Network":
        return Network(self.spec, self.params, self.frozen)

    @property
    def n_parameters(self) -> int:
        return self.flat.size

    def weight_names(self) -> list[str]:
        return [k for k in self.params if is_weight(k)]

    def trunk_names(self) -> list[str]:
        return [k for k in self.params if not k.startswith("head.")]

    def trainable_mask(self) -> np.ndarray:
        return np.concatenate([np.full(v.size, k not in self.frozen) for k, v in self.params.items()])


def is_weight(name: str) -> bool:
    return name.rsplit(".", 1)[1].startswith("W")


def _gaussian(rng, rows, cols):
    return rng.normal(0.0, np.sqrt(2.0 / cols), size=(rows, cols))


def _head(rng, n_classes, width):
    return {"head.W": _gaussian(rng, n_classes, width), "head.b": np.zeros(n_classes)}


def init_network(spec: NetworkSpec) -> Network:
    """He-scaled Gaussian weights and zero biases, fully determined by ``spec.init_seed``."""
    rng = np.random.default_rng(spec.init_seed)
    p = {
        "stem.W": _gaussian(rng, spec.width, spec.input_dim),
        "stem.b": np.zeros(spec.width),
    }
    for i in range(spec.n_blocks):
        p[f"block{i}.W1"] = _gaussian(rng, spec.width, spec.width)
        p[f"block{i}.b1"] = np.zeros(spec.width)
        p[f"block{i}.W2"] = _gaussian(rng, spec.width, spec.width)
        p[f"block{i}.b2"] = np.zeros(spec.width)
    p.update(_head(rng, spec.n_classes, spec.width))
    return Network(spec, p)


@dataclass
class ForwardCache:
    network_id: int
    x: np.ndarray
    stem_pre: np.ndarray
    block_in: list[np.ndarray]
    block_pre: list[np.ndarray]
    features: np.ndarray


def forward(net: Network, features) -> tuple[np.ndarray, ForwardCache]:
    """Scores of shape ``(batch, n_classes)`` plus the activations backward needs."""
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    p = net.params
    if x.shape[1] != net.spec.input_dim:
        raise ModelError(f"expected {net.spec.input_dim} features, got {x.shape[1]}")
    stem_pre = x @ p["stem.W"].T + p["stem.b"]
    h = np.maximum(stem_pre, 0.0)
    block_in, block_pre = [], []
    for i in range(net.spec.n_blocks):
        block_in.append(h)
        pre = h @ p[f"block{i}.W1"].T + p[f"block{i}.b1"]
        block_pre.append(pre)
        h = h + np.maximum(pre, 0.0) @ p[f"block{i}.W2"].T + p[f"block{i}.b2"]
    scores = h @ p["head.W"].T + p["head.b"]
    return scores, ForwardCache(id(net), x, stem_pre, block_in, block_pre, h)


def backward(net: Network, cache: ForwardCache, loss_grads, mu: float = 0.0) -> dict[str, np.ndarray]:
    """Gradient of ``mean_i loss_i + mu * sum ||W||^2`` for every parameter.

    ``loss_grads`` holds the per-sample derivatives of the loss w.r.t. the scores.
    """
    g = np.atleast_2d(np.asarray(loss_grads, dtype=np.float64))
    if cache.network_id != id(net) or g.shape != (cache.x.shape[0], net.spec.n_classes):
        raise ModelError("cache does not belong to this network/batch")
    p = net.params
    g = g / g.shape[0]
    grads: dict[str, np.ndarray] = {}
    grads["head.W"] = g.T @ cache.features
    grads["head.b"] = g.sum(axis=0)
    dh = g @ p["head.W"]
    for i in reversed(range(net.spec.n_blocks)):
        pre = cache.block_pre[i]
        act = np.maximum(pre, 0.0)
        grads[f"block{i}.W2"] = dh.T @ act
        grads[f"block{i}.b2"] = dh.sum(axis=0)
        dpre = (dh @ p[f"block{i}.W2"]) * (pre > 0)
        grads[f"block{i}.W1"] = dpre.T @ cache.block_in[i]
        grads[f"block{i}.b1"] = dpre.sum(axis=0)
        dh = dh + dpre @ p[f"block{i}.W1"]
    dstem = dh * (cache.stem_pre > 0)
    grads["stem.W"] = dstem.T @ cache.x
    grads["stem.b"] = dstem.sum(axis=0)
    if mu:
        for k in grads:
            if is_weight(k):
                grads[k] = grads[k] + 2.0 * mu * p[k]
    return {k: grads[k] for k in p}


def l2_penalty(net: Network, mu: float) -> float:
    if mu == 0:
        return 0.0
    return float(mu * sum(np.sum(v * v) for k, v in net.params.items() if is_weight(k)))


@dataclass
class AdamState:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    # flat moment buffers, laid out like Network.flat; created on the first step
    first_moment: np.ndarray | None = None
    second_moment: np.ndarray | None = None

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ModelError("learning rate must be > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ModelError("Adam betas must lie in [0, 1)")


def flatten_grads(net: Network, grads: dict[str, np.ndarray]) -> np.ndarray:
    if grads.keys() != net.params.keys():
        raise ModelError("gradient set does not match the network parameters")
    for k, v in net.params.items():
        if grads[k].shape != v.shape:
            raise ModelError(f"gradient shape {grads[k].shape} != parameter shape {v.shape} for {k}")
    return np.concatenate([grads[k].ravel() for k in net.params])


def adam_step(net: Network, grads: dict[str, np.ndarray], state: AdamState) -> None:
    """One bias-corrected Adam update, in place.  Frozen parameters are skipped."""
    g = flatten_grads(net, grads)
    if state.first_moment is None:
        state.first_moment = np.zeros_like(net.flat)
        state.second_moment = np.zeros_like(net.flat)
    elif state.first_moment.shape != net.flat.shape:
        raise ModelError("optimizer state belongs to a differently shaped network")
    mask = net.trainable_mask() if net.frozen else None
    if mask is not None:
        g = np.where(mask, g, 0.0)
    state.step_count += 1
    t = state.step_count
    m, v = state.first_moment, state.second_moment
    m *= state.beta1
    m += (1.0 - state.beta1) * g
    v *= state.beta2
    v += (1.0 - state.beta2) * (g * g)
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    step = state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    if mask is not None:
        step[~mask] = 0.0
    net.flat -= step


TRANSFER_MODES = ("head_only_reinit", "freeze_features")


def transfer_init(source: Network, new_n_classes: int, mode: str = "head_only_reinit", seed: int = 0) -> Network:
    """Copy the stem and residual blocks, draw a fresh head for ``new_n_classes``.

    ``freeze_features`` additionally marks the copied trunk as frozen so that
    :func:`adam_step` never moves it.
    """
    if mode not in TRANSFER_MODES:
        raise ModelError(f"unknown transfer mode {mode!r}")
    spec = NetworkSpec(
        source.spec.input_dim, source.spec.width, source.spec.n_blocks, new_n_classes, seed
    )
    params = {k: v.copy() for k, v in source.params.items() if not k.startswith("head.")}
    params.update(_head(np.random.default_rng(seed), new_n_classes, spec.width))
    frozen = frozenset(k for k in params if not k.startswith("head.")) if mode == "freeze_features" else frozenset()
    return Network(spec, params, frozen)


def predict_topk(net: Network, features, k: int) -> np.ndarray:
    scores, _ = forward(net, features)
    return ranked_classes(scores, k)


def softmax(scores) -> np.ndarray:
    z = np.asarray(scores, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def save_checkpoint(net: Network, path) -> None:
    """Write a JSON checkpoint; floats use shortest round-trip reprs, so reading back is exact."""
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "spec": asdict(net.spec),
        "params": {k: {"shape": list(v.shape), "values": v.ravel().tolist()} for k, v in net.params.items()},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path) -> Network:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise ModelError(f"unsupported checkpoint version {doc.get('format_version')!r}")
    spec = NetworkSpec(**doc["spec"])
    expected = init_network_shapes(spec)
    params = {}
    for k, entry in doc["params"].items():
        arr = np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"])
        if expected.get(k) != arr.shape:
            raise ModelError(f"checkpoint parameter {k} has unexpected shape {arr.shape}")
        params[k] = arr
    if params.keys() != expected.keys():
        raise ModelError("checkpoint parameters do not match its network spec")
    return Network(spec, {k: params[k] for k in expected})


def init_network_shapes(spec: NetworkSpec) -> dict[str, tuple[int, ...]]:
    shapes = {"stem.W": (spec.width, spec.input_dim), "stem.b": (spec.width,)}
    for i in range(spec.n_blocks):
        shapes[f"block{i}.W1"] = (spec.width, spec.width)
        shapes[f"block{i}.b1"] = (spec.width,)
        shapes[f"block{i}.W2"] = (spec.width, spec.width)
        shapes[f"block{i}.b2"] = (spec.width,)
    shapes["head.W"] = (spec.n_classes, spec.width)
    shapes["head.b"] = (spec.n_classes,)
    return shapes
