"""Velocity-completion models: rule-based baseline through GVRNN."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .. import diffcore as dc
from ..core_types import EventFrame, EventWindow, PitchSpec
from .archs import (
    ADD_FEATURES,
    ARCHS,
    GRAPH,
    RECURRENT,
    VARIATIONAL,
    ForwardOut,
    GNNModel,
    GRNNModel,
    GVRNNModel,
    MLPModel,
    ModelSpec,
    RNNModel,
    RuleBasedModel,
    VAEModel,
    VelocityModel,
    VGNNModel,
    VRNNModel,
    build_model,
    num_parameters,
)
from .blocks import (
    GNN,
    Gaussian,
    GaussianHead,
    GRUCell,
    MLPBlock,
    gnn_pass,
    gru_step,
    kl_diag_gaussian,
    mlp_block,
)
from .features import GraphBatch, build_graph_batch, build_window_batch
from .rule import RuleConfig, rule_based_velocity


def prepare_inputs(model: VelocityModel, samples: Sequence, pitch: PitchSpec | None = None):
    """Batch inputs for ``model`` from frames (single-frame archs) or windows."""
    spec = model.spec
    want = EventWindow if spec.recurrent else EventFrame
    for s in samples:
        if not isinstance(s, want):
            kind = "Dstar windows" if spec.recurrent else "D frames"
            raise TypeError(f"{spec.arch} consumes {kind}, got {type(s).__name__}")
    if spec.recurrent:
        return build_window_batch(samples, pitch, spec.use_ball_velocity_input)
    return build_graph_batch(samples, pitch, spec.use_ball_velocity_input)


def predict_batch(
    model: VelocityModel,
    samples: Sequence,
    rng: np.random.Generator | None = None,
    pitch: PitchSpec | None = None,
    rule_cfg: RuleConfig | None = None,
) -> np.ndarray:
    """Inference on a list of samples; target-step velocities (B, 22, 2) in pitch coordinates."""
    if model.spec.arch == "rule_based":
        cfg = rule_cfg or RuleConfig(model.spec.rule_speed, model.spec.rule_stop_radius)
        frames = [s.target if isinstance(s, EventWindow) else s for s in samples]
        return np.stack([rule_based_velocity(f, cfg, pitch) for f in frames])
    was_training = model.training
    model.eval()
    try:
        inputs = prepare_inputs(model, samples, pitch)
        out = model.forward(inputs, "infer", rng)
    finally:
        model.train(was_training)
    last = inputs[-1] if isinstance(inputs, list) else inputs
    v = out.v[-1].data.reshape(last.n, -1, 2)
    return v * last.attack_sign[:, None, None]


def model_forward(
    model: VelocityModel,
    sample,
    mode: str = "infer",
    rng: np.random.Generator | None = None,
    pitch: PitchSpec | None = None,
) -> dict:
    """Uniform single-sample interface returning numpy outputs.

    Returns ``{"v": (22, 2) or (k, 22, 2) velocities in pitch coordinates,
    "kl": per-step KL values}``.  Single-frame models take an
    :class:`EventFrame`; recurrent models take an :class:`EventWindow`.
    Batchnorm always uses its running statistics here.
    """
    spec = model.spec
    if spec.arch == "rule_based":
        frame = sample.target if isinstance(sample, EventWindow) else sample
        return {"v": rule_based_velocity(frame, RuleConfig(spec.rule_speed, spec.rule_stop_radius), pitch), "kl": [0.0]}
    inputs = prepare_inputs(model, [sample], pitch)
    was_training = model.training
    # a single sample cannot be batch-normalized; ``mode`` only selects
    # teacher forcing and encoder sampling
    model.eval()
    try:
        out = model.forward(inputs, mode, rng)
    finally:
        model.train(was_training)
    steps = inputs if isinstance(inputs, list) else [inputs]
    v = np.stack([o.data.reshape(-1, 2) * g.attack_sign[0] for o, g in zip(out.v, steps)])
    return {"v": v if spec.recurrent else v[0], "kl": [k.item() for k in out.kl]}


def variational_heads(
    model: VelocityModel,
    inputs,
    rng: np.random.Generator | None = None,
    h: dc.Tensor | None = None,
    with_encoder: bool = True,
) -> dict[str, Gaussian]:
    """Prior, encoder and decoder Gaussians of a variational model for one step.

    ``inputs`` is a :class:`GraphBatch`.  Recurrent variants take the
    previous recurrent state ``h`` (zeros by default).  The decoder is fed a
    sample from the encoder when it is requested, otherwise from the prior.
    """
    if model.spec.arch not in VARIATIONAL:
        raise ValueError(f"{model.spec.arch} has no variational heads")
    rng = rng if rng is not None else np.random.default_rng()
    g = inputs
    if isinstance(model, (VAEModel, VGNNModel)):
        hd = model.heads(g, with_encoder)
        z = (hd["encoder"] if with_encoder else hd["prior"]).sample(rng)
        hd["decoder"] = model.decode(g, z)
        return hd
    h = h if h is not None else model.gru.initial_state(g.n)[-1]
    if isinstance(model, VRNNModel):
        hd = model.heads(g, h, with_encoder)
        z = (hd["encoder"] if with_encoder else hd["prior"]).sample(rng)
        hd["decoder"] = model.decoder_head(model.decoder(dc.concat([g.flat_nodes, z, h])))
        return hd
    hn = dc.repeat_rows(h, 23)
    hd = model.heads(g, hn, with_encoder)
    z = (hd["encoder"] if with_encoder else hd["prior"]).sample(rng)
    players = dc.block_apply(np.eye(23)[1:], model.decoder(dc.concat([z, hn]), g))
    if model.add:
        players = dc.concat([players, *model.extra(g)])
    hd["decoder"] = model.decoder_head(players)
    return hd


__all__ = [
    "ADD_FEATURES",
    "ARCHS",
    "GNN",
    "GRAPH",
    "RECURRENT",
    "VARIATIONAL",
    "ForwardOut",
    "GNNModel",
    "GRNNModel",
    "GRUCell",
    "GVRNNModel",
    "Gaussian",
    "GaussianHead",
    "GraphBatch",
    "MLPBlock",
    "MLPModel",
    "ModelSpec",
    "RNNModel",
    "RuleBasedModel",
    "RuleConfig",
    "VAEModel",
    "VGNNModel",
    "VRNNModel",
    "VelocityModel",
    "build_graph_batch",
    "build_model",
    "build_window_batch",
    "gnn_pass",
    "gru_step",
    "kl_diag_gaussian",
    "mlp_block",
    "model_forward",
    "num_parameters",
    "predict_batch",
    "prepare_inputs",
    "rule_based_velocity",
    "variational_heads",
]
