"""Graph tensors built from normalized event frames.

Every sample is a complete directed graph over 23 nodes: node 0 is the ball
and nodes 1..22 are the players in slot order.  Edges are stored grouped by
destination node, each group listing the 22 source nodes in ascending
order, so a mean over consecutive groups of 22 edge rows is the mean of
incoming messages.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..core_types import (
    N_EVENT_TYPES,
    N_PLAYERS,
    EventFrame,
    EventWindow,
    PitchSpec,
    normalize_frame,
    normalize_window,
)

N_NODES = N_PLAYERS + 1
N_EDGES = N_NODES * (N_NODES - 1)
# is_ball, is_player, is_ball_holder, is_goalkeeper, attack-direction sign
N_NODE_FLAGS = 5
# same_team, source_is_ball_holder
N_EDGE_FLAGS = 2
# velocity inputs are divided by this so they sit on the same scale as positions
VEL_SCALE = 5.0


def _edge_index() -> tuple[np.ndarray, np.ndarray]:
    dst, src = [], []
    for i in range(N_NODES):
        for j in range(N_NODES):
            if j != i:
                dst.append(i)
                src.append(j)
    return np.array(dst), np.array(src)


EDGE_DST, EDGE_SRC = _edge_index()
# one-hot gather of the source node for every edge of one sample
SRC_GATHER = np.zeros((N_EDGES, N_NODES))
SRC_GATHER[np.arange(N_EDGES), EDGE_SRC] = 1.0
# selects the 22 player rows of a node block
PLAYER_SELECT = np.eye(N_NODES)[1:]
BALL_SELECT = np.eye(N_NODES)[:1]


def node_dim(use_ball_velocity: bool) -> int:
    return 2 + (2 if use_ball_velocity else 0) + N_NODE_FLAGS


@dataclass
class GraphBatch:
    """Model inputs for ``B`` frames (one time step).

    Attributes
    ----------
    nodes : (B*23, F) node features: position, optional ball velocity,
        node flags.
    node_flags : (B*23, 5) the flag columns alone.
    edge_flags : (B*506, 2) per-edge flags.
    v : (B*22, 2) true player velocities in m/s in the normalized
        orientation, or None when unavailable.
    v_nodes : (B*23, 2) true velocities scaled for use as an input, ball row
        zero, or None.
    event_onehot : (B, 6); x_end : (B, 2) normalized end position.
    team_pos, team_neg : (B*23, 1) masks of players attacking left to
        right / right to left.
    attack_sign : (B,) sign used to orient each sample; multiplying
        predictions by it returns them to pitch coordinates.
    """

    n: int
    nodes: np.ndarray
    node_flags: np.ndarray
    edge_flags: np.ndarray
    v: np.ndarray | None
    v_nodes: np.ndarray | None
    event_onehot: np.ndarray
    x_end: np.ndarray
    team_pos: np.ndarray
    team_neg: np.ndarray
    attack_sign: np.ndarray

    @property
    def flat_nodes(self) -> np.ndarray:
        return self.nodes.reshape(self.n, -1)

    @property
    def flat_v(self) -> np.ndarray | None:
        return None if self.v is None else self.v.reshape(self.n, -1)

    @property
    def flat_v_input(self) -> np.ndarray | None:
        return None if self.v is None else self.v.reshape(self.n, -1) / VEL_SCALE

    def permute_players(self, perm: np.ndarray) -> "GraphBatch":
        """Apply the same player permutation to every sample (testing aid)."""
        perm = np.asarray(perm)
        node_perm = np.concatenate([[0], perm + 1])
        new_of_old = np.empty(N_NODES, dtype=int)
        new_of_old[node_perm] = np.arange(N_NODES)

        def nodes_(a):
            return None if a is None else a.reshape(self.n, N_NODES, -1)[:, node_perm].reshape(self.n * N_NODES, -1)

        def players_(a):
            return None if a is None else a.reshape(self.n, N_PLAYERS, -1)[:, perm].reshape(self.n * N_PLAYERS, -1)

        # edge (dst, src) in the new ordering corresponds to old edge
        # (node_perm[dst], node_perm[src])
        lookup = {(d, s): e for e, (d, s) in enumerate(zip(EDGE_DST, EDGE_SRC))}
        edge_perm = np.array([lookup[(node_perm[d], node_perm[s])] for d, s in zip(EDGE_DST, EDGE_SRC)])
        ef = self.edge_flags.reshape(self.n, N_EDGES, -1)[:, edge_perm].reshape(self.n * N_EDGES, -1)
        return GraphBatch(
            self.n,
            nodes_(self.nodes),
            nodes_(self.node_flags),
            ef,
            players_(self.v),
            nodes_(self.v_nodes),
            self.event_onehot,
            self.x_end,
            nodes_(self.team_pos),
            nodes_(self.team_neg),
            self.attack_sign,
        )


def build_graph_batch(
    frames: Sequence[EventFrame],
    pitch: PitchSpec | None = None,
    use_ball_velocity: bool = True,
    signs: Sequence[int] | None = None,
) -> GraphBatch:
    """Build a batch from frames (raw or already normalized).

    ``signs`` forces the orientation of raw frames; by default each frame
    is oriented by its own attack direction.
    """
    pitch = pitch or PitchSpec()
    scale = pitch.scale
    B = len(frames)
    orient = np.empty(B)
    normed = []
    for b, f in enumerate(frames):
        if f.normalized:
            normed.append(f)
            orient[b] = 1.0
        else:
            s = f.attack_dir.sign if signs is None else int(signs[b])
            normed.append(normalize_frame(f, pitch, sign=s))
            orient[b] = s

    F = node_dim(use_ball_velocity)
    nodes = np.zeros((B, N_NODES, F))
    flags = np.zeros((B, N_NODES, N_NODE_FLAGS))
    edge_flags = np.zeros((B, N_EDGES, N_EDGE_FLAGS))
    has_v = all(np.all(np.isfinite(f.player_v)) for f in normed)
    v = np.zeros((B, N_PLAYERS, 2)) if has_v else None
    onehot = np.zeros((B, N_EVENT_TYPES))
    x_end = np.zeros((B, 2))
    for b, f in enumerate(normed):
        nodes[b, 0, :2] = f.x_ball
        nodes[b, 1:, :2] = f.player_x
        if use_ball_velocity:
            nodes[b, 0, 2:4] = f.v_ball * scale / VEL_SCALE
        flags[b, 0, 0] = 1.0
        flags[b, 1:, 1] = 1.0
        flags[b, 1:, 2] = f.holder
        flags[b, 1:, 3] = f.goalkeeper
        flags[b, 1:, 4] = f.player_attack_sign
        side = flags[b, :, 4]
        holder = flags[b, :, 2]
        edge_flags[b, :, 0] = (side[EDGE_DST] != 0) & (side[EDGE_DST] == side[EDGE_SRC])
        edge_flags[b, :, 1] = holder[EDGE_SRC]
        if v is not None:
            v[b] = f.player_v * scale
        onehot[b, int(f.event_type)] = 1.0
        x_end[b] = f.x_end
    nodes[:, :, F - N_NODE_FLAGS :] = flags
    v_nodes = None
    if v is not None:
        v_nodes = np.zeros((B, N_NODES, 2))
        v_nodes[:, 1:] = v / VEL_SCALE
        v_nodes = v_nodes.reshape(B * N_NODES, 2)
    side = flags[:, :, 4:5].reshape(B * N_NODES, 1)
    return GraphBatch(
        n=B,
        nodes=nodes.reshape(B * N_NODES, F),
        node_flags=flags.reshape(B * N_NODES, N_NODE_FLAGS),
        edge_flags=edge_flags.reshape(B * N_EDGES, N_EDGE_FLAGS),
        v=None if v is None else v.reshape(B * N_PLAYERS, 2),
        v_nodes=v_nodes,
        event_onehot=onehot,
        x_end=x_end,
        team_pos=(side > 0).astype(float),
        team_neg=(side < 0).astype(float),
        attack_sign=orient,
    )


def build_window_batch(
    windows: Sequence[EventWindow],
    pitch: PitchSpec | None = None,
    use_ball_velocity: bool = True,
) -> list[GraphBatch]:
    """One :class:`GraphBatch` per window step; all steps share the target's orientation."""
    pitch = pitch or PitchSpec()
    ks = {w.k for w in windows}
    if len(ks) != 1:
        raise ValueError(f"windows in a batch must share one length, got {sorted(ks)}")
    (k,) = ks
    normed = [normalize_window(w, pitch) for w in windows]
    steps = []
    for t in range(k):
        g = build_graph_batch([w.frames[t] for w in normed], pitch, use_ball_velocity)
        g.attack_sign = np.array([w.target.attack_dir.sign for w in windows], dtype=float)
        steps.append(g)
    return steps
