"""Network building blocks: MLP block, graph pass, GRU cell, Gaussian heads."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import diffcore as dc
from ..diffcore import BatchNorm, Linear, Module, Tensor
from .features import N_EDGE_FLAGS, N_NODE_FLAGS, N_NODES, N_PLAYERS, SRC_GATHER, GraphBatch


class MLPBlock(Module):
    """linear -> ELU -> batchnorm -> linear -> ELU -> linear."""

    def __init__(self, n_in: int, hidden: int, n_out: int, rng: np.random.Generator, dropout: float = 0.0):
        self.lin1 = Linear(n_in, hidden, rng)
        self.bn = BatchNorm(hidden)
        self.lin2 = Linear(hidden, hidden, rng)
        self.lin3 = Linear(hidden, n_out, rng)
        self.dropout = dropout

    def __call__(self, x) -> Tensor:
        if x.shape[1] != self.lin1.n_in:
            raise dc.ShapeError(f"mlp_block expects width {self.lin1.n_in}, got {x.shape[1]}")
        return self.after_first(self.lin1(x))

    def after_first(self, pre: Tensor) -> Tensor:
        """Continue the block from the first layer's pre-activation."""
        h = self.bn(dc.elu(pre))
        h = dc.elu(self.lin2(dc.dropout(h, self.dropout, training=self.training and self.dropout > 0)))
        return self.lin3(h)


def mlp_block(x, block: MLPBlock) -> Tensor:
    return block(x)


class GNN(Module):
    """One round of node -> edge -> node message passing on the complete graph.

    ``f_e`` maps the concatenation [source node, destination node, edge
    flags] of every directed edge through an MLP block; messages are
    averaged over each node's incoming edges and ``f_o`` maps
    [aggregate, node flags] to the node output.
    """

    def __init__(self, node_dim: int, n_out: int, hidden: int, rng: np.random.Generator, dropout: float = 0.0):
        self.node_dim = node_dim
        self.f_e = MLPBlock(2 * node_dim + N_EDGE_FLAGS, hidden, hidden, rng, dropout)
        self.f_o = MLPBlock(hidden + N_NODE_FLAGS, hidden, n_out, rng, dropout)

    def edge_messages(self, nodes: Tensor, g: GraphBatch) -> Tensor:
        F = self.node_dim
        if nodes.shape != (g.n * N_NODES, F):
            raise dc.ShapeError(f"gnn expects node matrix {(g.n * N_NODES, F)}, got {nodes.shape}")
        w = self.f_e.lin1.weight
        # the first linear layer of f_e applied to [src, dst, flags], factored
        # so the node projections are computed once per node
        p_src = dc.matmul(nodes, dc.slice_rows(w, 0, F))
        p_dst = dc.matmul(nodes, dc.slice_rows(w, F, 2 * F))
        pre = dc.add(dc.block_apply(SRC_GATHER, p_src), dc.repeat_rows(p_dst, N_NODES - 1))
        pre = dc.add(pre, dc.matmul(g.edge_flags, dc.slice_rows(w, 2 * F, 2 * F + N_EDGE_FLAGS)))
        pre = dc.add(pre, self.f_e.lin1.bias)
        return self.f_e.after_first(pre)

    def __call__(self, nodes, g: GraphBatch) -> Tensor:
        nodes = dc.as_tensor(nodes)
        agg = dc.group_mean(self.edge_messages(nodes, g), N_NODES - 1)
        return self.f_o(dc.concat([agg, g.node_flags]))


def gnn_pass(nodes, g: GraphBatch, gnn: GNN) -> Tensor:
    return gnn(nodes, g)


def players_only(node_values) -> Tensor:
    """(B*23, c) node rows -> (B*22, c) player rows."""
    return dc.block_apply(np.eye(N_NODES)[1:], node_values)


def broadcast_to_nodes(per_sample) -> Tensor:
    """(B, c) -> (B*23, c) by repeating each sample's row for every node."""
    return dc.repeat_rows(per_sample, N_NODES)


def broadcast_to_players(per_sample) -> Tensor:
    return dc.repeat_rows(per_sample, N_PLAYERS)


def pool_nodes(values, g: GraphBatch) -> Tensor:
    """Symmetric pooling of node rows into one row per sample.

    Concatenates the ball row, the mean over players attacking left to right
    and the mean over players attacking right to left.
    """
    values = dc.as_tensor(values)
    ball = dc.block_apply(np.eye(N_NODES)[:1], values)
    parts = [ball]
    for mask in (g.team_pos, g.team_neg):
        count = mask.reshape(g.n, N_NODES).sum(axis=1, keepdims=True)
        total = dc.block_apply(np.ones((1, N_NODES)), dc.mul(values, mask))
        parts.append(dc.div(total, np.maximum(count, 1.0)))
    return dc.concat(parts)


def pool_players(player_values, g: GraphBatch) -> Tensor:
    """Per-team means of (B*22, c) player rows -> (B, 2c)."""
    player_values = dc.as_tensor(player_values)
    parts = []
    for mask in (g.team_pos, g.team_neg):
        pm = mask.reshape(g.n, N_NODES)[:, 1:].reshape(-1, 1)
        count = pm.reshape(g.n, N_PLAYERS).sum(axis=1, keepdims=True)
        total = dc.block_apply(np.ones((1, N_PLAYERS)), dc.mul(player_values, pm))
        parts.append(dc.div(total, np.maximum(count, 1.0)))
    return dc.concat(parts)


class GRUCell(Module):
    """Gated recurrent unit; h' = (1 - u) * n + u * h."""

    def __init__(self, n_in: int, n_hidden: int, rng: np.random.Generator):
        self.n_in, self.n_hidden = n_in, n_hidden
        self.w_x = Tensor(np.concatenate([dc.xavier_init((n_in, n_hidden), rng).data for _ in range(3)], axis=1), True)
        self.w_h = Tensor(
            np.concatenate([dc.xavier_init((n_hidden, n_hidden), rng).data for _ in range(3)], axis=1), True
        )
        self.b_x = Tensor(np.zeros((1, 3 * n_hidden)), True)
        self.b_h = Tensor(np.zeros((1, 3 * n_hidden)), True)

    def __call__(self, x, h) -> Tensor:
        x, h = dc.as_tensor(x), dc.as_tensor(h)
        R = self.n_hidden
        if x.shape[1] != self.n_in or h.shape[1] != R:
            raise dc.ShapeError(f"gru_step expects input {self.n_in} and state {R}, got {x.shape} and {h.shape}")
        gx = dc.add(dc.matmul(x, self.w_x), self.b_x)
        gh = dc.add(dc.matmul(h, self.w_h), self.b_h)
        r = dc.sigmoid(dc.add(dc.slice_cols(gx, 0, R), dc.slice_cols(gh, 0, R)))
        u = dc.sigmoid(dc.add(dc.slice_cols(gx, R, 2 * R), dc.slice_cols(gh, R, 2 * R)))
        n = dc.tanh(dc.add(dc.slice_cols(gx, 2 * R, 3 * R), dc.mul(r, dc.slice_cols(gh, 2 * R, 3 * R))))
        return dc.add(dc.sub(n, dc.mul(u, n)), dc.mul(u, h))


def gru_step(x, h, cell: GRUCell) -> Tensor:
    return cell(x, h)


class StackedGRU(Module):
    def __init__(self, n_in: int, n_hidden: int, n_layers: int, rng: np.random.Generator):
        if n_layers < 1:
            raise ValueError("num_layer must be at least 1")
        self.cells = [GRUCell(n_in if i == 0 else n_hidden, n_hidden, rng) for i in range(n_layers)]

    def initial_state(self, batch: int) -> list[Tensor]:
        return [Tensor(np.zeros((batch, c.n_hidden))) for c in self.cells]

    def __call__(self, x, hs: list[Tensor]) -> list[Tensor]:
        out = []
        inp = x
        for cell, h in zip(self.cells, hs):
            inp = cell(inp, h)
            out.append(inp)
        return out


@dataclass
class Gaussian:
    mean: Tensor
    std: Tensor

    def sample(self, rng: np.random.Generator) -> Tensor:
        eps = rng.standard_normal(self.mean.shape)
        return dc.add(self.mean, dc.mul(self.std, eps))


class GaussianHead(Module):
    """Linear mean output and linear + softplus standard deviation."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        self.mean = Linear(n_in, n_out, rng)
        self.std = Linear(n_in, n_out, rng)

    def __call__(self, x) -> Gaussian:
        return Gaussian(self.mean(x), dc.softplus(self.std(x)))


def kl_diag_gaussian(q: Gaussian, p: Gaussian, n_samples: int | None = None) -> Tensor:
    """KL(q || p) for diagonal Gaussians, summed over dimensions, averaged over samples.

    Rows of the inputs may be grouped per sample (e.g. 23 node rows per
    graph); ``n_samples`` gives the number of samples to average over and
    defaults to the number of rows.
    """
    if q.mean.shape != p.mean.shape or q.std.shape != p.std.shape or q.mean.shape != q.std.shape:
        raise dc.ShapeError(f"kl: shapes q={q.mean.shape}/{q.std.shape} p={p.mean.shape}/{p.std.shape}")
    if np.any(q.std.data <= 0) or np.any(p.std.data <= 0):
        raise ValueError("kl: standard deviations must be positive")
    n = q.mean.shape[0] if n_samples is None else n_samples
    var_q = dc.square(q.std)
    var_p = dc.square(p.std)
    diff = dc.sub(q.mean, p.mean)
    # log(sp/sq) + (sq^2 + (mq-mp)^2) / (2 sp^2) - 1/2
    term = dc.sub(dc.log(p.std), dc.log(q.std))
    term = dc.add(term, dc.div(dc.add(var_q, dc.square(diff)), dc.scale(var_p, 2.0)))
    total = dc.sub(dc.sum_all(term), 0.5 * term.data.size)
    return dc.scale(total, 1.0 / n)
