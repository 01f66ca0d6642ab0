"""
Multi-scale two-head network with exact reverse mode.

Each scale's pooled feature vector passes through one shared encoder (the
same weights for every scale); the per-scale embeddings are concatenated
and fed to two heads. The distribution head emits two raw values mapped
through softplus plus a floor to (alpha, beta); the classification head
emits one logit.

Parameters live in three named groups, ``backbone``, ``dist_head`` and
``cls_head``, so the trainer can give each group its own learning rate.
Weights use the row-vector convention ``z = x @ W + b``.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .betadist import BetaParams, mean, std_dev
from .config import Activation, LossWeights, ModelConfig
from .errors import DataIOError, StructuralError
from .loss import compound_batch_grad

logger = logging.getLogger(__name__)

GROUPS = ("backbone", "dist_head", "cls_head")
CHECKPOINT_FORMAT = 1

ParamGroups = Dict[str, Dict[str, np.ndarray]]


@dataclass
class AdamMoments:
    """First/second moment buffers shaped like the parameters."""

    m: ParamGroups
    v: ParamGroups
    step: int = 0

    @classmethod
    def zeros_like(cls, params: ParamGroups) -> "AdamMoments":
        return cls(m=_zeros_like(params), v=_zeros_like(params), step=0)


@dataclass
class ModelState:
    """All learnable parameters plus optimizer state."""

    config: ModelConfig
    params: ParamGroups
    optimizer: Optional[AdamMoments] = None
    epoch: int = 0
    data_seed: Optional[int] = None

    def copy(self) -> "ModelState":
        optimizer = None
        if self.optimizer is not None:
            optimizer = AdamMoments(
                m=_copy_groups(self.optimizer.m),
                v=_copy_groups(self.optimizer.v),
                step=self.optimizer.step,
            )
        return ModelState(
            config=self.config,
            params=_copy_groups(self.params),
            optimizer=optimizer,
            epoch=self.epoch,
            data_seed=self.data_seed,
        )

    def num_parameters(self) -> int:
        return sum(a.size for group in self.params.values() for a in group.values())


@dataclass
class BatchLoss:
    """Batch-mean loss and its components."""

    total: float
    bce: float
    w2: float


@dataclass
class ForwardCache:
    """Activations kept by the forward pass for the backward pass."""

    alpha: np.ndarray
    beta: np.ndarray
    logits: np.ndarray
    raw_dist: np.ndarray
    encoder_inputs: List[np.ndarray] = field(default_factory=list)
    encoder_preacts: List[np.ndarray] = field(default_factory=list)
    embedding: Optional[np.ndarray] = None
    head_inputs: Dict[str, List[np.ndarray]] = field(default_factory=dict)
    head_preacts: Dict[str, List[np.ndarray]] = field(default_factory=dict)


def _zeros_like(params: ParamGroups) -> ParamGroups:
    return {g: {k: np.zeros_like(v) for k, v in group.items()} for g, group in params.items()}


def _copy_groups(params: ParamGroups) -> ParamGroups:
    return {g: {k: v.copy() for k, v in group.items()} for g, group in params.items()}


def _layer_sizes(config: ModelConfig) -> Dict[str, List[int]]:
    emb = config.embedding_width
    return {
        "backbone": [config.feature_dim, *config.encoder_widths],
        "dist_head": [emb, *config.dist_head_widths, 2],
        "cls_head": [emb, *config.cls_head_widths, 1],
    }


def _activate(z: np.ndarray, kind: Activation) -> np.ndarray:
    if kind is Activation.TANH:
        return np.tanh(z)
    return np.maximum(z, 0.0)


def _activation_grad(z: np.ndarray, kind: Activation) -> np.ndarray:
    if kind is Activation.TANH:
        t = np.tanh(z)
        return 1.0 - t * t
    return (z > 0.0).astype(float)


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    ex = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + ex), ex / (1.0 + ex))


def init(config: ModelConfig, seed: int) -> ModelState:
    """Fan-in scaled uniform weights, zero biases; deterministic in seed."""
    rng = np.random.default_rng(seed)
    gain = 6.0 if config.activation is Activation.RECTIFIER else 3.0
    params: ParamGroups = {}
    for group, sizes in _layer_sizes(config).items():
        params[group] = {}
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            limit = math.sqrt(gain / fan_in)
            params[group][f"W{i}"] = rng.uniform(-limit, limit, size=(fan_in, fan_out))
            params[group][f"b{i}"] = np.zeros(fan_out)
    return ModelState(config=config, params=params)


def as_feature_batch(config: ModelConfig, features: Union[np.ndarray, Sequence]) -> np.ndarray:
    """Coerce features to shape (batch, num_scales, feature_dim)."""
    x = np.asarray(features, dtype=float)
    if x.ndim == 2:
        x = x[np.newaxis]
    if x.ndim != 3 or x.shape[1:] != (config.num_scales, config.feature_dim):
        raise StructuralError(
            f"expected features of shape (*, {config.num_scales}, {config.feature_dim}), "
            f"got {x.shape}"
        )
    return x


def _dense_stack(
    x: np.ndarray,
    group: Dict[str, np.ndarray],
    kind: Activation,
    activate_last: bool,
) -> Tuple[np.ndarray, List[np.ndarray], List[np.ndarray]]:
    n_layers = len(group) // 2
    inputs, preacts = [], []
    h = x
    for i in range(n_layers):
        inputs.append(h)
        z = h @ group[f"W{i}"] + group[f"b{i}"]
        preacts.append(z)
        h = _activate(z, kind) if (activate_last or i < n_layers - 1) else z
    return h, inputs, preacts


def _dense_stack_backward(
    dout: np.ndarray,
    group: Dict[str, np.ndarray],
    inputs: List[np.ndarray],
    preacts: List[np.ndarray],
    kind: Activation,
    activate_last: bool,
) -> Tuple[Dict[str, np.ndarray], np.ndarray]:
    n_layers = len(group) // 2
    grads: Dict[str, np.ndarray] = {}
    dh = dout
    for i in reversed(range(n_layers)):
        if activate_last or i < n_layers - 1:
            dz = dh * _activation_grad(preacts[i], kind)
        else:
            dz = dh
        grads[f"W{i}"] = inputs[i].T @ dz
        grads[f"b{i}"] = dz.sum(axis=0)
        dh = dz @ group[f"W{i}"].T
    return grads, dh


def forward_batch(state: ModelState, features: np.ndarray) -> ForwardCache:
    """Forward pass over a batch of shape (batch, num_scales, feature_dim)."""
    cfg = state.config
    x = as_feature_batch(cfg, features)
    batch = x.shape[0]
    flat = x.reshape(batch * cfg.num_scales, cfg.feature_dim)

    h, enc_inputs, enc_preacts = _dense_stack(
        flat, state.params["backbone"], cfg.activation, activate_last=True
    )
    # scale blocks side by side, in scale order
    embedding = h.reshape(batch, cfg.num_scales * h.shape[1])

    raw_dist, dist_inputs, dist_preacts = _dense_stack(
        embedding, state.params["dist_head"], cfg.activation, activate_last=False
    )
    raw_cls, cls_inputs, cls_preacts = _dense_stack(
        embedding, state.params["cls_head"], cfg.activation, activate_last=False
    )
    alpha = softplus(raw_dist[:, 0]) + cfg.alpha_beta_floor
    beta = softplus(raw_dist[:, 1]) + cfg.alpha_beta_floor
    return ForwardCache(
        alpha=alpha,
        beta=beta,
        logits=raw_cls[:, 0],
        raw_dist=raw_dist,
        encoder_inputs=enc_inputs,
        encoder_preacts=enc_preacts,
        embedding=embedding,
        head_inputs={"dist_head": dist_inputs, "cls_head": cls_inputs},
        head_preacts={"dist_head": dist_preacts, "cls_head": cls_preacts},
    )


def forward(state: ModelState, features: Union[np.ndarray, Sequence]) -> Tuple[BetaParams, float]:
    """Predicted distribution and classification logit for one sample."""
    x = as_feature_batch(state.config, features)
    if x.shape[0] != 1:
        raise StructuralError(f"forward takes one sample, got a batch of {x.shape[0]}")
    cache = forward_batch(state, x)
    return BetaParams(cache.alpha[0], cache.beta[0]), float(cache.logits[0])


def embed(state: ModelState, features: Union[np.ndarray, Sequence]) -> np.ndarray:
    """Concatenated per-scale embeddings, shape (batch, embedding_width)."""
    cache = forward_batch(state, as_feature_batch(state.config, features))
    assert cache.embedding is not None
    return cache.embedding


def backward_batch(
    state: ModelState,
    features: np.ndarray,
    target_alpha: np.ndarray,
    target_beta: np.ndarray,
    labels: np.ndarray,
    w: LossWeights,
) -> Tuple[ParamGroups, BatchLoss]:
    """Gradients of the batch-mean compound loss for every parameter."""
    cfg = state.config
    cache = forward_batch(state, features)
    batch = cache.alpha.shape[0]
    ce, w2, d_alpha, d_beta, d_logit, total = compound_batch_grad(
        cache.alpha,
        cache.beta,
        cache.logits,
        np.asarray(target_alpha, dtype=float),
        np.asarray(target_beta, dtype=float),
        np.asarray(labels),
        w,
    )
    scale = 1.0 / batch

    d_raw = np.stack(
        [d_alpha * _sigmoid(cache.raw_dist[:, 0]), d_beta * _sigmoid(cache.raw_dist[:, 1])],
        axis=1,
    ) * scale
    d_cls = (d_logit * scale)[:, np.newaxis]

    grads: ParamGroups = {}
    grads["dist_head"], d_emb_dist = _dense_stack_backward(
        d_raw,
        state.params["dist_head"],
        cache.head_inputs["dist_head"],
        cache.head_preacts["dist_head"],
        cfg.activation,
        activate_last=False,
    )
    grads["cls_head"], d_emb_cls = _dense_stack_backward(
        d_cls,
        state.params["cls_head"],
        cache.head_inputs["cls_head"],
        cache.head_preacts["cls_head"],
        cfg.activation,
        activate_last=False,
    )
    d_embedding = d_emb_dist + d_emb_cls
    width = cfg.encoder_widths[-1]
    # undo the concatenation; shared weights sum the per-scale contributions
    d_flat = d_embedding.reshape(batch * cfg.num_scales, width)
    grads["backbone"], _ = _dense_stack_backward(
        d_flat,
        state.params["backbone"],
        cache.encoder_inputs,
        cache.encoder_preacts,
        cfg.activation,
        activate_last=True,
    )
    loss = BatchLoss(
        total=float(np.mean(total)), bce=float(np.mean(ce)), w2=float(np.mean(w2))
    )
    return grads, loss


def backward(
    state: ModelState,
    features: Union[np.ndarray, Sequence],
    target: BetaParams,
    label: int,
    w: LossWeights,
) -> Tuple[ParamGroups, float]:
    """Exact parameter gradients and compound loss for one sample."""
    grads, loss = backward_batch(
        state,
        as_feature_batch(state.config, features),
        np.array([target.alpha]),
        np.array([target.beta]),
        np.array([label]),
        w,
    )
    return grads, loss.total


def loss_value(
    state: ModelState,
    features: np.ndarray,
    target_alpha: np.ndarray,
    target_beta: np.ndarray,
    labels: np.ndarray,
    w: LossWeights,
) -> float:
    """Batch-mean compound loss without gradients."""
    cache = forward_batch(state, features)
    *_, total = compound_batch_grad(
        cache.alpha,
        cache.beta,
        cache.logits,
        np.asarray(target_alpha, dtype=float),
        np.asarray(target_beta, dtype=float),
        np.asarray(labels),
        w,
    )
    return float(np.mean(total))


def predict_risk(
    state: ModelState, features: Union[np.ndarray, Sequence]
) -> Tuple[float, BetaParams, float]:
    """Risk score (mean of the predicted Beta), the Beta itself and its std."""
    params, _ = forward(state, features)
    return mean(params), params, std_dev(params)


def save_checkpoint(state: ModelState, path: Union[str, Path]) -> None:
    """Write the state as JSON; floats round-trip bit-exactly."""
    doc = {
        "format_version": CHECKPOINT_FORMAT,
        "config": state.config.model_dump(mode="json"),
        "epoch": state.epoch,
        "data_seed": state.data_seed,
        "params": _groups_to_lists(state.params),
        "optimizer": None,
    }
    if state.optimizer is not None:
        doc["optimizer"] = {
            "step": state.optimizer.step,
            "m": _groups_to_lists(state.optimizer.m),
            "v": _groups_to_lists(state.optimizer.v),
        }
    path = Path(path)
    try:
        with open(path, "w", encoding="utf-8") as f:
            f.write(json.dumps(doc, sort_keys=True) + "\n")
    except OSError as e:
        raise DataIOError(path, f"cannot write checkpoint: {e}") from e
    logger.debug(f"Saved checkpoint {path} (epoch {state.epoch})")


def load_checkpoint(path: Union[str, Path]) -> ModelState:
    """Read a checkpoint written by :func:`save_checkpoint`."""
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except OSError as e:
        raise DataIOError(path, f"cannot read checkpoint: {e}") from e
    except json.JSONDecodeError as e:
        raise StructuralError(f"{path}: checkpoint is not valid JSON: {e}") from e

    if doc.get("format_version") != CHECKPOINT_FORMAT:
        raise StructuralError(f"{path}: unsupported checkpoint format {doc.get('format_version')}")
    config = ModelConfig.model_validate(doc["config"])
    params = _lists_to_groups(doc["params"])
    expected = init(config, seed=0).params
    for group, tensors in expected.items():
        for name, ref in tensors.items():
            got = params.get(group, {}).get(name)
            if got is None or got.shape != ref.shape:
                raise StructuralError(
                    f"{path}: parameter {group}.{name} does not match the stored config"
                )

    optimizer = None
    if doc.get("optimizer") is not None:
        optimizer = AdamMoments(
            m=_lists_to_groups(doc["optimizer"]["m"]),
            v=_lists_to_groups(doc["optimizer"]["v"]),
            step=int(doc["optimizer"]["step"]),
        )
    return ModelState(
        config=config,
        params=params,
        optimizer=optimizer,
        epoch=int(doc.get("epoch", 0)),
        data_seed=doc.get("data_seed"),
    )


def _groups_to_lists(groups: ParamGroups) -> Dict[str, Dict[str, list]]:
    return {g: {k: v.tolist() for k, v in group.items()} for g, group in groups.items()}


def _lists_to_groups(doc: Dict[str, Dict[str, list]]) -> ParamGroups:
    return {
        g: {k: np.array(v, dtype=float) for k, v in group.items()} for g, group in doc.items()
    }
