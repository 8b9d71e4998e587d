"""Potential pitch control (PPCF), off-ball scoring opportunity (OBSO) and error metrics.

PPCF integrates the coupled control equations

    dPPCF_j/dT = (1 - sum_k PPCF_k) * f_j(T) * lambda

with forward Euler from the ball's arrival time at the target cell, where
f_j is a logistic probability that player j has reached the cell by time T.
All cells of a grid are integrated together as one vectorized system; a
single cell is the one-row special case of the same code.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .core_types import N_PLAYERS, EventFrame, PitchSpec

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PPCFParams:
    lambda_control: float = 4.3
    tti_sigma: float = 0.45
    reaction_time: float = 0.7
    max_speed: float = 5.0
    ball_speed: float = 15.0
    int_dt: float = 0.04
    max_T: float = 10.0
    converge_tol: float = 0.01

    def __post_init__(self):
        for name, value in vars(self).items():
            if not value > 0:
                raise ValueError(f"PPCFParams.{name} must be positive, got {value}")


@dataclass(frozen=True, eq=False)
class GameStateSnapshot:
    """Ball position and the 22 players, with ``attacking`` marking the team in possession."""

    ball: np.ndarray
    x: np.ndarray
    v: np.ndarray
    attacking: np.ndarray
    goalkeeper: np.ndarray
    attack_sign: int = 1

    def __post_init__(self):
        for name in ("ball", "x", "v"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        for name in ("attacking", "goalkeeper"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=bool))
        if self.x.shape != (N_PLAYERS, 2) or self.v.shape != (N_PLAYERS, 2):
            raise ValueError(f"snapshot needs {N_PLAYERS} players, got x {self.x.shape}, v {self.v.shape}")
        if not np.all(np.isfinite(self.v)) or not np.all(np.isfinite(self.x)):
            raise ValueError("snapshot positions and velocities must be finite")

    def swap_teams(self) -> "GameStateSnapshot":
        return GameStateSnapshot(self.ball, self.x, self.v, ~self.attacking, self.goalkeeper, -self.attack_sign)


def snapshot_from_frame(frame: EventFrame, velocities: np.ndarray | None = None) -> GameStateSnapshot:
    """Snapshot of a raw (pitch-coordinate) frame, optionally with substituted velocities."""
    if frame.normalized:
        raise ValueError("snapshots are built from frames in pitch coordinates")
    v = frame.player_v if velocities is None else np.asarray(velocities, dtype=float)
    return GameStateSnapshot(frame.x_ball, frame.player_x, v, frame.teammate, frame.goalkeeper,
                             frame.attack_dir.sign)


@dataclass
class PitchGrid:
    """Values on the cell centers of ``pitch``; row 0 is the top touchline side."""

    values: np.ndarray
    pitch: PitchSpec = field(default_factory=PitchSpec)
    unconverged: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.pitch.grid_ny, self.pitch.grid_nx):
            raise ValueError(f"grid shape {self.values.shape} does not match pitch "
                             f"{(self.pitch.grid_ny, self.pitch.grid_nx)}")

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def total(self) -> float:
        return float(self.values.sum())


def cell_points(pitch: PitchSpec) -> np.ndarray:
    """(ny*nx, 2) cell-center coordinates in row-major grid order."""
    xs, ys = pitch.cell_centers()
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


# ----------------------------------------------------------------------------
# PPCF


def time_to_intercept(x: np.ndarray, v: np.ndarray, r: np.ndarray, params: PPCFParams | None = None) -> np.ndarray:
    """Expected arrival time at ``r``: react while drifting, then run straight at max speed.

    Broadcasts over leading dimensions: ``x`` and ``v`` (..., 2), ``r`` (..., 2).
    """
    p = params or PPCFParams()
    x, v, r = (np.asarray(a, dtype=float) for a in (x, v, r))
    after = x + v * p.reaction_time
    return p.reaction_time + np.linalg.norm(r - after, axis=-1) / p.max_speed


def _intercept_prob(T, tau, sigma):
    # logistic 1 / (1 + exp(-pi (T - tau) / (sqrt(3) s))) in an overflow-free form
    return 0.5 * (1.0 + np.tanh(0.5 * np.pi / np.sqrt(3.0) / sigma * (T - tau)))


@dataclass
class PPCFResult:
    att: np.ndarray
    defn: np.ndarray
    converged: np.ndarray
    history: np.ndarray | None = None  # (steps + 1, cells) att + def after each step


def ppcf_cells(state: GameStateSnapshot, cells: np.ndarray, params: PPCFParams | None = None,
               return_history: bool = False) -> PPCFResult:
    """Integrate control for a batch of target cells ``(C, 2)``.

    Each step adds ``(1 - total) * f_j * lambda * dt`` to every player; if the
    summed increment would exceed the remaining ``1 - total`` it is scaled
    down to land exactly on 1, so totals never overshoot.  A cell stops once
    its total reaches ``1 - converge_tol`` or after ``max_T`` seconds past
    the ball's arrival.
    """
    p = params or PPCFParams()
    cells = np.atleast_2d(np.asarray(cells, dtype=float))
    C = cells.shape[0]
    t0 = np.linalg.norm(cells - state.ball[None, :], axis=1) / p.ball_speed
    tau = time_to_intercept(state.x[None, :, :], state.v[None, :, :], cells[:, None, :], p)
    n_steps = int(np.ceil(p.max_T / p.int_dt - 1e-12))
    ppcf = np.zeros((C, N_PLAYERS))
    total = np.zeros(C)
    active = np.ones(C, dtype=bool)
    hist = [total.copy()] if return_history else None
    rate = p.lambda_control * p.int_dt
    for i in range(1, n_steps + 1):
        idx = np.nonzero(active)[0]
        if idx.size == 0:
            break
        T = t0[idx] + i * p.int_dt
        f = _intercept_prob(T[:, None], tau[idx], p.tti_sigma)
        remaining = 1.0 - total[idx]
        inc = remaining[:, None] * f * rate
        s = inc.sum(axis=1)
        over = s > remaining
        if over.any():
            inc[over] *= (remaining[over] / s[over])[:, None]
        ppcf[idx] += inc
        total[idx] = ppcf[idx].sum(axis=1)
        if return_history:
            hist.append(total.copy())
        active[idx[total[idx] >= 1.0 - p.converge_tol]] = False
    converged = ~active
    att = (ppcf * state.attacking[None, :]).sum(axis=1)
    defn = (ppcf * ~state.attacking[None, :]).sum(axis=1)
    att, defn = _cap_unit(att, defn)
    return PPCFResult(att, defn, converged, np.array(hist) if return_history else None)


def _cap_unit(att, defn):
    # summation rounding can leave att + def a few ulp above 1; keep the larger
    # side and give the other the exact complement (symmetric under team swap)
    over = att + defn > 1.0
    if over.any():
        hi = np.maximum(att[over], defn[over])
        lo = np.where(att[over] == defn[over], 0.5, 1.0 - hi)
        hi = np.where(att[over] == defn[over], 0.5, hi)
        a_hi = att[over] >= defn[over]
        att, defn = att.copy(), defn.copy()
        att[over] = np.where(a_hi, hi, lo)
        defn[over] = np.where(a_hi, lo, hi)
    return att, defn


def ppcf_cell(state: GameStateSnapshot, r, params: PPCFParams | None = None, return_history: bool = False) -> dict:
    """Attacking and defending control at a single location ``r``.

    Returns ``{"att", "def", "converged"}`` and, with ``return_history``,
    ``"history"``: the running att + def total after every step.
    """
    res = ppcf_cells(state, np.asarray(r, dtype=float)[None, :], params, return_history)
    if not res.converged[0]:
        log.warning("PPCF did not converge at %s within max_T; returning partial sums", np.asarray(r).tolist())
    out = {"att": float(res.att[0]), "def": float(res.defn[0]), "converged": bool(res.converged[0])}
    if return_history:
        out["history"] = res.history[:, 0]
    return out


def ppcf_grid(state: GameStateSnapshot, pitch: PitchSpec | None = None, params: PPCFParams | None = None) -> PitchGrid:
    """Attacking-team PPCF at every cell center."""
    pitch = pitch or PitchSpec()
    res = ppcf_cells(state, cell_points(pitch), params)
    n_bad = int((~res.converged).sum())
    if n_bad:
        log.debug("%d cells did not converge within max_T", n_bad)
    return PitchGrid(res.att.reshape(pitch.grid_ny, pitch.grid_nx), pitch, n_bad)


# ----------------------------------------------------------------------------
# transition, scoring, OBSO


def transition_grid(state: GameStateSnapshot, pitch: PitchSpec | None = None, sigma_T: float = 14.0) -> PitchGrid:
    """Isotropic Gaussian in distance from the ball, normalized to sum to 1."""
    if not sigma_T > 0:
        raise ValueError("sigma_T must be positive")
    pitch = pitch or PitchSpec()
    d2 = np.sum((cell_points(pitch) - state.ball[None, :]) ** 2, axis=1)
    w = np.exp(-0.5 * d2 / sigma_T**2)
    return PitchGrid((w / w.sum()).reshape(pitch.grid_ny, pitch.grid_nx), pitch)


def exp_decay_scoring(d_goal: np.ndarray, alpha: float = 0.14) -> np.ndarray:
    return np.exp(-alpha * d_goal)


def scoring_grid(pitch: PitchSpec | None = None, attack_sign: int = 1, alpha: float = 0.14,
                 model: Callable[[np.ndarray], np.ndarray] | None = None) -> PitchGrid:
    """Scoring probability by distance to the center of the goal being attacked.

    ``model`` maps distances to probabilities and defaults to
    ``exp(-alpha * d)``.
    """
    pitch = pitch or PitchSpec()
    goal = np.array([attack_sign * pitch.half_length, 0.0])
    d = np.linalg.norm(cell_points(pitch) - goal[None, :], axis=1)
    vals = model(d) if model is not None else exp_decay_scoring(d, alpha)
    return PitchGrid(np.asarray(vals).reshape(pitch.grid_ny, pitch.grid_nx), pitch)


@dataclass
class OBSOResult:
    grid: PitchGrid
    total: float
    ppcf: PitchGrid
    transition: PitchGrid
    scoring: PitchGrid


def obso_grid(state: GameStateSnapshot, pitch: PitchSpec | None = None, params: PPCFParams | None = None,
              sigma_T: float = 14.0, alpha: float = 0.14, ppcf: PitchGrid | None = None) -> OBSOResult:
    """Elementwise scoring x attacking PPCF x transition, plus the scalar sum."""
    pitch = pitch or PitchSpec()
    pc = ppcf if ppcf is not None else ppcf_grid(state, pitch, params)
    tr = transition_grid(state, pitch, sigma_T)
    sc = scoring_grid(pitch, state.attack_sign, alpha)
    g = PitchGrid(sc.values * pc.values * tr.values, pitch)
    return OBSOResult(g, g.total(), pc, tr, sc)


def er_metric(grid_a, grid_b) -> float:
    """Mean absolute difference over all cells."""
    a, b = np.asarray(grid_a, dtype=float), np.asarray(grid_b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"grid shapes differ: {a.shape} vs {b.shape}")
    return float(np.mean(np.abs(a - b)))


# ----------------------------------------------------------------------------
# comparison of completions


@dataclass
class ComparisonReport:
    rows: list  # (event key, er_ppcf_rule, er_ppcf_model, er_obso_rule, er_obso_model)
    wins: dict
    summary: dict

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["event_index", "er_ppcf_rule", "er_ppcf_model", "er_obso_rule", "er_obso_model"])
            for key, *vals in self.rows:
                w.writerow([key, *(repr(float(v)) for v in vals)])


def _count(rule: np.ndarray, model: np.ndarray) -> dict:
    return {
        "model": int(np.sum(model < rule)),
        "rule": int(np.sum(rule < model)),
        "ties": int(np.sum(rule == model)),
    }


def compare_completions(
    frames: Sequence[EventFrame],
    model_velocities: Sequence[np.ndarray],
    rule_velocities: Sequence[np.ndarray],
    pitch: PitchSpec | None = None,
    params: PPCFParams | None = None,
    sigma_T: float = 14.0,
    alpha: float = 0.14,
) -> ComparisonReport:
    """Per-event Er of PPCF and OBSO against the true-velocity grids.

    Positions are identical across the three velocity sources; only the
    22 player velocities differ.  A win goes to the completion with the
    strictly smaller error; equal errors are ties.
    """
    if not frames:
        raise ValueError("no events to compare")
    if not (len(frames) == len(model_velocities) == len(rule_velocities)):
        raise ValueError("frames and velocity lists differ in length")
    pitch = pitch or PitchSpec()
    rows = []
    for f, vm, vr in zip(frames, model_velocities, rule_velocities):
        truth = obso_grid(snapshot_from_frame(f), pitch, params, sigma_T, alpha)
        rule = obso_grid(snapshot_from_frame(f, vr), pitch, params, sigma_T, alpha)
        model = obso_grid(snapshot_from_frame(f, vm), pitch, params, sigma_T, alpha)
        rows.append((
            f.event_index,
            er_metric(rule.ppcf, truth.ppcf),
            er_metric(model.ppcf, truth.ppcf),
            er_metric(rule.grid, truth.grid),
            er_metric(model.grid, truth.grid),
        ))
    arr = np.array([r[1:] for r in rows])
    wins = {"ppcf": _count(arr[:, 0], arr[:, 1]), "obso": _count(arr[:, 2], arr[:, 3])}
    names = ["er_ppcf_rule", "er_ppcf_model", "er_obso_rule", "er_obso_model"]
    summary = {
        n: {"mean": float(arr[:, i].mean()), "min": float(arr[:, i].min()), "max": float(arr[:, i].max())}
        for i, n in enumerate(names)
    }
    summary["n_events"] = len(rows)
    return ComparisonReport(rows, wins, summary)


# ----------------------------------------------------------------------------
# heatmaps


def red_colormap(n: int = 256) -> np.ndarray:
    """(n, 3) uint8 table from white (lowest) to dark red (highest)."""
    t = np.linspace(0.0, 1.0, n)
    r = 255.0 - t * (255.0 - 128.0)
    gb = 255.0 * (1.0 - t)
    return np.round(np.stack([r, gb, gb], axis=1)).astype(np.uint8)


def grid_to_rgb(values: np.ndarray, cell_px: int = 10, vmin: float | None = None,
                vmax: float | None = None) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    lo = values.min() if vmin is None else vmin
    hi = values.max() if vmax is None else vmax
    table = red_colormap()
    if hi > lo:
        idx = np.round((np.clip(values, lo, hi) - lo) / (hi - lo) * (len(table) - 1)).astype(int)
    else:
        idx = np.zeros(values.shape, dtype=int)
    rgb = table[idx]
    return np.repeat(np.repeat(rgb, cell_px, axis=0), cell_px, axis=1)


def write_grid_csv(grid, path) -> Path:
    path = Path(path)
    np.savetxt(path, np.asarray(grid, dtype=float), delimiter=",", fmt="%.17g")
    return path


def read_grid_csv(path, pitch: PitchSpec | None = None) -> PitchGrid:
    return PitchGrid(np.loadtxt(path, delimiter=",", ndmin=2), pitch or PitchSpec())


def write_ppm(rgb: np.ndarray, path) -> Path:
    """Binary PPM (P6): the simplest uncompressed RGB raster."""
    path = Path(path)
    h, w, _ = rgb.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(rgb, dtype=np.uint8).tobytes())
    return path


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P6":
        raise ValueError(f"{path}: not a binary PPM")
    w, h = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4], dtype=np.uint8, count=w * h * 3).reshape(h, w, 3)


def export_heatmap(grid, path, fmt: str = "csv", cell_px: int = 10) -> Path:
    """Write a grid as CSV (ny rows x nx columns, row 0 = top) or a PPM image."""
    values = np.asarray(grid, dtype=float)
    if not np.all(np.isfinite(values)):
        raise ValueError("heatmap grid contains non-finite values")
    if fmt == "csv":
        return write_grid_csv(values, path)
    if fmt in ("ppm", "image"):
        return write_ppm(grid_to_rgb(values, cell_px), path)
    raise ValueError(f"unknown heatmap format {fmt!r}; use 'csv' or 'ppm'")
