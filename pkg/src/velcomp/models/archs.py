"""The velocity-completion architecture family.

Every model maps a batch to per-step player velocity predictions of shape
(B*22, 2) in m/s (normalized orientation) plus a per-step KL term.
Non-recurrent models consume a :class:`GraphBatch` built from single
frames; recurrent models consume a list of them, one per window step.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .. import diffcore as dc
from ..core_types import N_EVENT_TYPES, N_PLAYERS, child_rng
from ..diffcore import Linear, Module, Tensor
from .blocks import (
    GNN,
    Gaussian,
    GaussianHead,
    MLPBlock,
    StackedGRU,
    broadcast_to_nodes,
    broadcast_to_players,
    kl_diag_gaussian,
    players_only,
    pool_nodes,
    pool_players,
)
from .features import N_NODES, VEL_SCALE, GraphBatch, node_dim

ARCHS = (
    "rule_based",
    "mlp",
    "vae",
    "gnn",
    "gnn_add",
    "vgnn",
    "vgnn_dec_add",
    "rnn",
    "vrnn",
    "grnn",
    "grnn_dec_add",
    "gvrnn",
    "gvrnn_dec_add",
)
RECURRENT = {"rnn", "vrnn", "grnn", "grnn_dec_add", "gvrnn", "gvrnn_dec_add"}
VARIATIONAL = {"vae", "vgnn", "vgnn_dec_add", "vrnn", "gvrnn", "gvrnn_dec_add"}
GRAPH = {"gnn", "gnn_add", "vgnn", "vgnn_dec_add", "grnn", "grnn_dec_add", "gvrnn", "gvrnn_dec_add"}
ADD_FEATURES = {"gnn_add", "vgnn_dec_add", "grnn_dec_add", "gvrnn_dec_add"}


@dataclass(frozen=True)
class ModelSpec:
    arch: str = "grnn"
    num_hid: int = 8
    rnn_dim: int = 46
    num_layer: int = 1
    use_ball_velocity_input: bool = True
    hidden_dim: int = 32
    dropout: float = 0.0
    seed: int = 0
    rule_speed: float = 3.0
    rule_stop_radius: float = 0.5

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ValueError(f"unknown arch {self.arch!r}; valid names: {', '.join(ARCHS)}")
        for name in ("num_hid", "rnn_dim", "num_layer", "hidden_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    @property
    def recurrent(self) -> bool:
        return self.arch in RECURRENT

    @property
    def variational(self) -> bool:
        return self.arch in VARIATIONAL

    @property
    def graph(self) -> bool:
        return self.arch in GRAPH

    @property
    def dataset_kind(self) -> str:
        return "Dstar" if self.recurrent else "D"

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(**d)


@dataclass
class ForwardOut:
    v: list = field(default_factory=list)
    kl: list = field(default_factory=list)


def _zero() -> Tensor:
    return Tensor(0.0)


class VelocityModel(Module):
    spec: ModelSpec

    def forward(self, inputs, mode: str, rng: np.random.Generator | None = None) -> ForwardOut:
        raise NotImplementedError

    @staticmethod
    def _check_mode(mode: str):
        if mode not in ("train", "infer"):
            raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")


class _AddFeatures(Module):
    """Linear embeddings of the event type and end position."""

    def __init__(self, num_hid: int, rng):
        self.f_a = Linear(N_EVENT_TYPES, num_hid, rng)
        self.f_x_end = Linear(2, num_hid, rng)

    def __call__(self, g: GraphBatch) -> list[Tensor]:
        return [broadcast_to_players(self.f_a(g.event_onehot)), broadcast_to_players(self.f_x_end(g.x_end))]


# ----------------------------------------------------------------------------
# single-frame models


class MLPModel(VelocityModel):
    def __init__(self, spec: ModelSpec, rng):
        self.spec = spec
        F = node_dim(spec.use_ball_velocity_input)
        self.net = MLPBlock(N_NODES * F, spec.hidden_dim, 2 * N_PLAYERS, rng, spec.dropout)

    def forward(self, g: GraphBatch, mode, rng=None) -> ForwardOut:
        self._check_mode(mode)
        out = self.net(g.flat_nodes)
        return ForwardOut([dc.reshape(out, (g.n * N_PLAYERS, 2))], [_zero()])


class VAEModel(VelocityModel):
    def __init__(self, spec: ModelSpec, rng):
        self.spec = spec
        F = node_dim(spec.use_ball_velocity_input)
        H, Z = spec.hidden_dim, spec.num_hid
        self.prior = MLPBlock(N_NODES * F, H, H, rng, spec.dropout)
        self.prior_head = GaussianHead(H, Z, rng)
        self.encoder = MLPBlock(N_NODES * F + 2 * N_PLAYERS, H, H, rng, spec.dropout)
        self.encoder_head = GaussianHead(H, Z, rng)
        self.decoder = MLPBlock(N_NODES * F + Z, H, H, rng, spec.dropout)
        self.decoder_head = GaussianHead(H, 2 * N_PLAYERS, rng)

    def heads(self, g: GraphBatch, with_encoder: bool) -> dict[str, Gaussian]:
        x = g.flat_nodes
        out = {"prior": self.prior_head(self.prior(x))}
        if with_encoder:
            if g.v is None:
                raise ValueError("the encoder conditions on true velocities, none given")
            out["encoder"] = self.encoder_head(self.encoder(dc.concat([x, g.flat_v_input])))
        return out

    def decode(self, g: GraphBatch, z) -> Gaussian:
        return self.decoder_head(self.decoder(dc.concat([g.flat_nodes, z])))

    def forward(self, g: GraphBatch, mode, rng=None) -> ForwardOut:
        self._check_mode(mode)
        rng = rng if rng is not None else np.random.default_rng()
        hd = self.heads(g, with_encoder=mode == "train")
        if mode == "train":
            z = hd["encoder"].sample(rng)
            kl = kl_diag_gaussian(hd["encoder"], hd["prior"])
        else:
            z = hd["prior"].sample(rng)
            kl = _zero()
        dec = self.decode(g, z)
        return ForwardOut([dc.reshape(dec.mean, (g.n * N_PLAYERS, 2))], [kl])


class GNNModel(VelocityModel):
    def __init__(self, spec: ModelSpec, rng):
        self.spec = spec
        F = node_dim(spec.use_ball_velocity_input)
        H = spec.hidden_dim
        self.add = spec.arch in ADD_FEATURES
        self.gnn = GNN(F, H, H, rng, spec.dropout)
        self.extra = _AddFeatures(spec.num_hid, rng) if self.add else None
        self.readout = Linear(H + (2 * spec.num_hid if self.add else 0), 2, rng)

    def forward(self, g: GraphBatch, mode, rng=None) -> ForwardOut:
        self._check_mode(mode)
        players = players_only(self.gnn(g.nodes, g))
        if self.add:
            players = dc.concat([players, *self.extra(g)])
        return ForwardOut([self.readout(players)], [_zero()])


class VGNNModel(VelocityModel):
    def __init__(self, spec: ModelSpec, rng):
        self.spec = spec
        F = node_dim(spec.use_ball_velocity_input)
        H, Z = spec.hidden_dim, spec.num_hid
        self.add = spec.arch in ADD_FEATURES
        self.prior = GNN(F, H, H, rng, spec.dropout)
        self.prior_head = GaussianHead(H, Z, rng)
        self.encoder = GNN(F + 2, H, H, rng, spec.dropout)
        self.encoder_head = GaussianHead(H, Z, rng)
        self.decoder = GNN(F + Z, H, H, rng, spec.dropout)
        self.extra = _AddFeatures(Z, rng) if self.add else None
        self.decoder_head = GaussianHead(H + (2 * Z if self.add else 0), 2, rng)

    def heads(self, g: GraphBatch, with_encoder: bool) -> dict[str, Gaussian]:
        out = {"prior": self.prior_head(self.prior(g.nodes, g))}
        if with_encoder:
            if g.v_nodes is None:
                raise ValueError("the encoder conditions on true velocities, none given")
            out["encoder"] = self.encoder_head(self.encoder(np.concatenate([g.nodes, g.v_nodes], axis=1), g))
        return out

    def decode(self, g: GraphBatch, z) -> Gaussian:
        players = players_only(self.decoder(dc.concat([g.nodes, z]), g))
        if self.add:
            players = dc.concat([players, *self.extra(g)])
        return self.decoder_head(players)

    def forward(self, g: GraphBatch, mode, rng=None) -> ForwardOut:
        self._check_mode(mode)
        rng = rng if rng is not None else np.random.default_rng()
        hd = self.heads(g, with_encoder=mode == "train")
        if mode == "train":
            z = hd["encoder"].sample(rng)
            kl = kl_diag_gaussian(hd["encoder"], hd["prior"], n_samples=g.n)
        else:
            z = hd["prior"].sample(rng)
            kl = _zero()
        return ForwardOut([self.decode(g, z).mean], [kl])


# ----------------------------------------------------------------------------
# recurrent models


def _feedback(g: GraphBatch, v_pred: Tensor, mode: str) -> np.ndarray:
    """Velocity fed back into the recurrence: truth in training, prediction otherwise."""
    if mode == "train":
        if g.v is None:
            raise ValueError("teacher forcing needs ground-truth velocities")
        return g.v / VEL_SCALE
    return v_pred.data / VEL_SCALE


class _Recurrent(VelocityModel):
    def step(self, g: GraphBatch, hs: list[Tensor], mode: str, rng) -> tuple[Tensor, Tensor, list[Tensor]]:
        raise NotImplementedError

    def forward(self, steps: Sequence[GraphBatch], mode, rng=None) -> ForwardOut:
        self._check_mode(mode)
        if isinstance(steps, GraphBatch):
            raise TypeError("recurrent models consume a list of per-step batches (a window)")
        rng = rng if rng is not None else np.random.default_rng()
        hs = self.gru.initial_state(steps[0].n)
        out = ForwardOut()
        try:
            for t, g in enumerate(steps):
                dc.set_sequence_step(self, t)
                v, kl, hs = self.step(g, hs, mode, rng)
                out.v.append(v)
                out.kl.append(kl)
        finally:
            dc.set_sequence_step(self, 0)
        return out


class RNNModel(_Recurrent):
    def __init__(self, spec: ModelSpec, rng):
        self.spec = spec
        F = node_dim(spec.use_ball_velocity_input)
        H, Z, R = spec.hidden_dim, spec.num_hid, spec.rnn_dim
        X = N_NODES * F
        self.encoder = MLPBlock(X + R, H, Z, rng, spec.dropout)
        self.decoder = MLPBlock(Z + R, H, 2 * N_PLAYERS, rng, spec.dropout)
        self.gru = StackedGRU(X + Z + 2 * N_PLAYERS, R, spec.num_layer, rng)

    def step(self, g, hs, mode, rng):
        x, h = g.flat_nodes, hs[-1]
        z = self.encoder(dc.concat([x, h]))
        v = self.decoder(dc.concat([z, h]))
        v = dc.reshape(v, (g.n * N_PLAYERS, 2))
        fb = _feedback(g, v, mode).reshape(g.n, -1)
        hs = self.gru(dc.concat([x, z, fb]), hs)
        return v, _zero(), hs


class VRNNModel(_Recurrent):
    def __init__(self, spec: ModelSpec, rng):
        self.spec = spec
        F = node_dim(spec.use_ball_velocity_input)
        H, Z, R = spec.hidden_dim, spec.num_hid, spec.rnn_dim
        X = N_NODES * F
        self.prior = MLPBlock(X + R, H, H, rng, spec.dropout)
        self.prior_head = GaussianHead(H, Z, rng)
        self.encoder = MLPBlock(X + 2 * N_PLAYERS + R, H, H, rng, spec.dropout)
        self.encoder_head = GaussianHead(H, Z, rng)
        self.decoder = MLPBlock(X + Z + R, H, H, rng, spec.dropout)
        self.decoder_head = GaussianHead(H, 2 * N_PLAYERS, rng)
        self.gru = StackedGRU(X + Z + 2 * N_PLAYERS, R, spec.num_layer, rng)

    def heads(self, g, h, with_encoder: bool) -> dict[str, Gaussian]:
        x = g.flat_nodes
        out = {"prior": self.prior_head(self.prior(dc.concat([x, h])))}
        if with_encoder:
            if g.v is None:
                raise ValueError("the encoder conditions on true velocities, none given")
            out["encoder"] = self.encoder_head(self.encoder(dc.concat([x, g.flat_v_input, h])))
        return out

    def step(self, g, hs, mode, rng):
        x, h = g.flat_nodes, hs[-1]
        hd = self.heads(g, h, with_encoder=mode == "train")
        if mode == "train":
            z = hd["encoder"].sample(rng)
            kl = kl_diag_gaussian(hd["encoder"], hd["prior"])
        else:
            z = hd["prior"].sample(rng)
            kl = _zero()
        dec = self.decoder_head(self.decoder(dc.concat([x, z, h])))
        v = dc.reshape(dec.mean, (g.n * N_PLAYERS, 2))
        fb = _feedback(g, v, mode).reshape(g.n, -1)
        hs = self.gru(dc.concat([x, z, fb]), hs)
        return v, kl, hs


class GRNNModel(_Recurrent):
    def __init__(self, spec: ModelSpec, rng):
        self.spec = spec
        F = node_dim(spec.use_ball_velocity_input)
        H, Z, R = spec.hidden_dim, spec.num_hid, spec.rnn_dim
        self.add = spec.arch in ADD_FEATURES
        self.encoder = GNN(F + R, Z, H, rng, spec.dropout)
        self.decoder = GNN(Z + R, H, H, rng, spec.dropout)
        self.extra = _AddFeatures(Z, rng) if self.add else None
        self.readout = Linear(H + (2 * Z if self.add else 0), 2, rng)
        self.gru = StackedGRU(3 * F + 3 * Z + 4, R, spec.num_layer, rng)

    def step(self, g, hs, mode, rng):
        h = broadcast_to_nodes(hs[-1])
        z = self.encoder(dc.concat([g.nodes, h]), g)
        players = players_only(self.decoder(dc.concat([z, h]), g))
        if self.add:
            players = dc.concat([players, *self.extra(g)])
        v = self.readout(players)
        fb = _feedback(g, v, mode)
        rnn_in = dc.concat([pool_nodes(g.nodes, g), pool_nodes(z, g), pool_players(fb, g)])
        return v, _zero(), self.gru(rnn_in, hs)


class GVRNNModel(_Recurrent):
    def __init__(self, spec: ModelSpec, rng):
        self.spec = spec
        F = node_dim(spec.use_ball_velocity_input)
        H, Z, R = spec.hidden_dim, spec.num_hid, spec.rnn_dim
        self.add = spec.arch in ADD_FEATURES
        self.prior = GNN(F + R, H, H, rng, spec.dropout)
        self.prior_head = GaussianHead(H, Z, rng)
        self.encoder = GNN(F + 2 + R, H, H, rng, spec.dropout)
        self.encoder_head = GaussianHead(H, Z, rng)
        self.decoder = GNN(Z + R, H, H, rng, spec.dropout)
        self.extra = _AddFeatures(Z, rng) if self.add else None
        self.decoder_head = GaussianHead(H + (2 * Z if self.add else 0), 2, rng)
        self.gru = StackedGRU(3 * F + 3 * Z + 4, R, spec.num_layer, rng)

    def heads(self, g, h_nodes, with_encoder: bool) -> dict[str, Gaussian]:
        out = {"prior": self.prior_head(self.prior(dc.concat([g.nodes, h_nodes]), g))}
        if with_encoder:
            if g.v_nodes is None:
                raise ValueError("the encoder conditions on true velocities, none given")
            out["encoder"] = self.encoder_head(self.encoder(dc.concat([g.nodes, g.v_nodes, h_nodes]), g))
        return out

    def step(self, g, hs, mode, rng):
        h = broadcast_to_nodes(hs[-1])
        hd = self.heads(g, h, with_encoder=mode == "train")
        if mode == "train":
            z = hd["encoder"].sample(rng)
            kl = kl_diag_gaussian(hd["encoder"], hd["prior"], n_samples=g.n)
        else:
            z = hd["prior"].sample(rng)
            kl = _zero()
        players = players_only(self.decoder(dc.concat([z, h]), g))
        if self.add:
            players = dc.concat([players, *self.extra(g)])
        v = self.decoder_head(players).mean
        fb = _feedback(g, v, mode)
        rnn_in = dc.concat([pool_nodes(g.nodes, g), pool_nodes(z, g), pool_players(fb, g)])
        return v, kl, self.gru(rnn_in, hs)


class RuleBasedModel(VelocityModel):
    """Parameter-free baseline wrapped in the model interface."""

    def __init__(self, spec: ModelSpec, rng=None):
        self.spec = spec


_CLASSES = {
    "rule_based": RuleBasedModel,
    "mlp": MLPModel,
    "vae": VAEModel,
    "gnn": GNNModel,
    "gnn_add": GNNModel,
    "vgnn": VGNNModel,
    "vgnn_dec_add": VGNNModel,
    "rnn": RNNModel,
    "vrnn": VRNNModel,
    "grnn": GRNNModel,
    "grnn_dec_add": GRNNModel,
    "gvrnn": GVRNNModel,
    "gvrnn_dec_add": GVRNNModel,
}


def build_model(spec: ModelSpec) -> VelocityModel:
    """Instantiate ``spec.arch`` with Xavier-initialized weights drawn from ``spec.seed``."""
    return _CLASSES[spec.arch](spec, child_rng(spec.seed, 7))


def num_parameters(spec: ModelSpec) -> int:
    return build_model(spec).num_parameters()
