"""Synthetic matches: 25 Hz tracking plus an event stream with known velocities.

Players follow damped second-order dynamics towards role anchors that move
with the ball; the random drive is itself a smooth (Ornstein-Uhlenbeck)
process, so positions are twice differentiable and finite differences of
the tracking stream recover the stored velocities closely.  The ball is
carried by its holder and flies in straight lines between possession
events.
"""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core_types import N_PLAYERS, EventType, PitchSpec, child_rng

FPS = 25
DT = 1.0 / FPS
HALFTIME_SECONDS = 900.0
TEAMS = ("home", "away")

# 4-4-2 in a team's own frame (attacking towards +x); slot 0 is the goalkeeper
FORMATION = np.array(
    [
        [-48.0, 0.0],
        [-32.0, -22.0], [-35.0, -8.0], [-35.0, 8.0], [-32.0, 22.0],
        [-14.0, -24.0], [-16.0, -8.0], [-16.0, 8.0], [-14.0, 24.0],
        [2.0, -9.0], [4.0, 9.0],
    ]
)


@dataclass(frozen=True)
class SynthConfig:
    n_matches: int = 20
    match_seconds: float = 1200.0
    seed: int = 0
    event_rate: float = 0.7
    speed_cap: float = 8.0
    accel_sigma: float = 1.0
    pass_length_sigma: float = 15.0
    missing_ball_prob: float = 0.0  # per event: ball unobserved for the 5 frames around it
    stiffness: float = 0.18
    damping: float = 0.55
    drive_tau: float = 1.0
    ball_speed: float = 15.0
    carry_push: float = 14.0
    forward_bias: float = 0.08
    turnover_scale: float = 0.5
    team_drive_share: float = 0.8

    def __post_init__(self):
        for name in ("n_matches", "match_seconds", "event_rate", "speed_cap", "accel_sigma",
                     "pass_length_sigma", "stiffness", "damping", "drive_tau", "ball_speed"):
            if not getattr(self, name) > 0:
                raise ValueError(f"SynthConfig.{name} must be positive")
        if not 0.0 <= self.team_drive_share <= 1.0:
            raise ValueError("team_drive_share must be in [0, 1]")
        if not 0.0 <= self.missing_ball_prob < 1.0:
            raise ValueError("missing_ball_prob must be in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Tracking:
    """A whole match of tracking data.

    ``ball`` is NaN where the ball was not observed.  Player slots 0-10 belong
    to ``teams[0..10]`` and so on; ``goalkeepers`` is roster metadata and may
    be None.
    """

    frame_no: np.ndarray
    t: np.ndarray
    ball: np.ndarray
    players: np.ndarray
    ids: list
    teams: list
    goalkeepers: np.ndarray | None = None

    @property
    def n_frames(self) -> int:
        return len(self.frame_no)

    def record(self, i: int) -> dict:
        return {
            "frame_no": int(self.frame_no[i]),
            "t": float(self.t[i]),
            "ball": self.ball[i],
            "players": [
                {"id": self.ids[j], "team": self.teams[j], "x": self.players[i, j]} for j in range(len(self.ids))
            ],
        }

    def half_bounds(self, gap: float = 1.0) -> list[tuple[int, int]]:
        """[start, stop) frame-index ranges separated by time gaps > ``gap`` s."""
        breaks = np.nonzero(np.diff(self.t) > gap)[0] + 1
        edges = [0, *breaks.tolist(), self.n_frames]
        return [(a, b) for a, b in zip(edges, edges[1:]) if b > a]


@dataclass(frozen=True)
class RawEvent:
    t: float
    type_code: str
    possessing_team: str
    x_start: tuple
    x_end: tuple


@dataclass
class Match:
    tracking: Tracking
    events: list
    velocities: np.ndarray  # (n_frames, 23, 2): ball then players, generator truth
    match_id: int = 0
    meta: dict = field(default_factory=dict)


class _State:
    def __init__(self, x, v, eta):
        self.x, self.v, self.eta = x, v, eta


def _team_sign(team: int, half: int) -> int:
    # home attacks left to right in the first half
    s = 1 if team == 0 else -1
    return s if half == 1 else -s


def generate_match(cfg: SynthConfig, match_seed: int, pitch: PitchSpec | None = None, match_id: int = 0) -> Match:
    """Simulate one match; identical ``(cfg, match_seed)`` give identical output."""
    pitch = pitch or PitchSpec()
    rng = child_rng(cfg.seed, match_seed)
    half_frames = int(round(cfg.match_seconds / 2 * FPS))
    n_total = 2 * half_frames
    hl, hw = pitch.half_length, pitch.half_width

    pos = np.zeros((n_total, N_PLAYERS + 1, 2))
    vel_hist = np.zeros((n_total + 1, N_PLAYERS + 1, 2))
    t = np.zeros(n_total)
    frame_no = np.zeros(n_total, dtype=int)
    events: list[RawEvent] = []
    team_of = np.repeat([0, 1], 11)
    is_gk = np.zeros(N_PLAYERS, dtype=bool)
    is_gk[[0, 11]] = True
    base = np.concatenate([FORMATION, FORMATION])

    drive_sd = cfg.accel_sigma
    a_eta = np.exp(-DT / cfg.drive_tau)
    b_eta = drive_sd * np.sqrt(1 - a_eta**2)
    k, c = cfg.stiffness, cfg.damping
    missing_frames: list[int] = []

    for half in (1, 2):
        signs = np.array([_team_sign(tm, half) for tm in team_of], dtype=float)[:, None]
        x = base * signs * np.array([0.5, 1.0])[None, :] + rng.normal(0, 1.0, (N_PLAYERS, 2))
        x[is_gk] = base[is_gk] * signs[is_gk]
        v = np.zeros((N_PLAYERS, 2))
        eta = drive_sd * _drive_noise(rng, team_of, cfg.team_drive_share)
        # kickoff: a central attacker of the team attacking left-to-right this half
        holder = 9 if signs[0, 0] > 0 else 20
        x[holder] = [0.0, 0.0]
        ball = x[holder].copy()
        flight = None  # (start, end, t0, duration, receiver_team, kind)
        hold_time = 0.0
        hold_for = _hold_duration(rng, cfg)
        offset = (half - 1) * half_frames
        t0_half = 0.0 if half == 1 else cfg.match_seconds / 2 + HALFTIME_SECONDS
        frame0 = 0 if half == 1 else int(round((cfg.match_seconds / 2 + HALFTIME_SECONDS) * FPS))
        receiver = -1
        for n in range(half_frames):
            i = offset + n
            tt = t0_half + n * DT
            t[i] = tt
            frame_no[i] = frame0 + n
            pos[i, 0] = ball
            pos[i, 1:] = x

            poss_team = team_of[holder] if holder >= 0 else (flight[4] if flight else 0)
            # anchors: formation slot shifted with the ball, in each team's own frame
            bx = ball[0] * signs[:, 0]
            by = ball[1]
            in_poss = team_of == poss_team
            anchor_x = base[:, 0] * 0.55 + 0.55 * bx + np.where(in_poss, 7.0, -4.0)
            anchor_y = base[:, 1] * 0.75 + 0.3 * by * signs[:, 0]
            anchor_x = np.where(is_gk, -48.0 + 0.08 * (bx + hl), anchor_x)
            anchor_y = np.where(is_gk, 0.15 * by * signs[:, 0], anchor_y)
            anchor = np.stack([anchor_x, anchor_y], axis=1) * signs
            d_ball = np.linalg.norm(x - ball, axis=1)
            # nearest outfield defender presses the ball
            defenders = np.nonzero((~in_poss) & (~is_gk))[0]
            presser = defenders[np.argmin(d_ball[defenders])]
            anchor[presser] = ball
            if holder >= 0:
                anchor[holder] = x[holder] + np.array([cfg.carry_push * signs[holder, 0], 0.0])
            if flight is not None and receiver >= 0:
                anchor[receiver] = flight[1]
            anchor[:, 0] = np.clip(anchor[:, 0], -hl + 1, hl - 1)
            anchor[:, 1] = np.clip(anchor[:, 1], -hw + 1, hw - 1)

            eta = a_eta * eta + b_eta * _drive_noise(rng, team_of, cfg.team_drive_share)
            acc = k * (anchor - x) - c * v + eta
            v_new = v + acc * DT
            speed = np.linalg.norm(v_new, axis=1, keepdims=True)
            v_new = np.where(speed > cfg.speed_cap, v_new * cfg.speed_cap / np.maximum(speed, 1e-12), v_new)
            x_new = x + v_new * DT
            # stay on the pitch: clamp and kill outward velocity
            for ax, lim in ((0, hl + 2.0), (1, hw + 2.0)):
                out = np.abs(x_new[:, ax]) > lim
                if out.any():
                    x_new[out, ax] = np.sign(x_new[out, ax]) * lim
                    v_new[out, ax] = 0.0
            vel_hist[i + 1, 1:] = v_new
            x, v = x_new, v_new

            # ball
            if holder >= 0:
                hold_time += DT
                ball_new = x[holder].copy()
                fire = hold_time >= hold_for
                if fire:
                    ev, flight, receiver, holder_after = _make_event(
                        rng, cfg, pitch, x, v, holder, team_of, is_gk, signs, tt, ball
                    )
                    events.append(ev)
                    if cfg.missing_ball_prob > 0 and rng.random() < cfg.missing_ball_prob:
                        missing_frames.extend(range(i - 2, i + 3))
                    holder = holder_after
                    hold_time = 0.0
                    hold_for = _hold_duration(rng, cfg)
                    if flight is not None:
                        holder = -1
                        ball_new = ball + (flight[1] - flight[0]) / flight[3] * DT
                ball = ball_new
            else:
                start, end, tf0, dur, rteam, _kind = flight
                frac = (tt + DT - tf0) / dur
                if frac >= 1.0:
                    ball = end.copy()
                    cand = np.nonzero(team_of == rteam)[0] if rteam >= 0 else np.arange(N_PLAYERS)
                    holder = int(cand[np.argmin(np.linalg.norm(x[cand] - end, axis=1))])
                    flight = None
                    receiver = -1
                    hold_time = 0.0
                    hold_for = _hold_duration(rng, cfg)
                else:
                    ball = start + (end - start) * frac

    # generator truth: central difference of the integrated path at each frame
    ball_v = np.zeros((n_total, 2))
    for a, b in ((0, half_frames), (half_frames, n_total)):
        seg = pos[a:b, 0]
        ball_v[a:b] = np.gradient(seg, DT, axis=0)
    player_v = 0.5 * (vel_hist[:-1, 1:] + vel_hist[1:, 1:])
    for a in (0, half_frames):
        player_v[a] = vel_hist[a + 1, 1:]
    velocities = np.concatenate([ball_v[:, None, :], player_v], axis=1)

    ball_obs = pos[:, 0].copy()
    if missing_frames:
        idx = np.clip(np.array(missing_frames), 0, n_total - 1)
        ball_obs[idx] = np.nan
    ids = [f"{TEAMS[team_of[j]]}_{j % 11 + 1}" for j in range(N_PLAYERS)]
    tracking = Tracking(
        frame_no=frame_no,
        t=t,
        ball=ball_obs,
        players=pos[:, 1:].copy(),
        ids=ids,
        teams=[TEAMS[tm] for tm in team_of],
        goalkeepers=is_gk.copy(),
    )
    return Match(tracking, events, velocities, match_id, {"match_seed": match_seed, "config": cfg.to_dict()})


def _drive_noise(rng, team_of: np.ndarray, share: float) -> np.ndarray:
    """Unit-variance innovations; a fraction ``share`` of the variance is common to each team."""
    indiv = rng.standard_normal((N_PLAYERS, 2))
    if share <= 0:
        return indiv
    common = rng.standard_normal((2, 2))[team_of]
    return np.sqrt(share) * common + np.sqrt(1.0 - share) * indiv


def _hold_duration(rng, cfg: SynthConfig) -> float:
    """Time on the ball before the next action; mean 1 / event_rate."""
    return (0.5 + rng.random()) / cfg.event_rate


def _make_event(rng, cfg, pitch, x, v, holder, team_of, is_gk, signs, tt, ball):
    """Choose an on-ball action for ``holder`` and the ball flight it starts."""
    hl = pitch.half_length
    team = team_of[holder]
    s = signs[holder, 0]
    bx, by = ball[0] * s, ball[1]
    u = rng.random()
    if bx > 30 and abs(by) < 18 and u < 0.35:
        kind = EventType.SHOT
    elif bx > 22 and abs(by) > 18 and u < 0.45:
        kind = EventType.CROSS
    elif bx < -28 and u < 0.3:
        kind = EventType.CLEARANCE
    elif u < 0.78:
        kind = EventType.PASS
    elif u < 0.95:
        kind = EventType.DRIBBLE
    else:
        kind = EventType.OTHER

    receiver = -1
    rteam = team
    speed = cfg.ball_speed
    if kind == EventType.SHOT:
        end = np.array([s * hl, rng.normal(0, 3.0)])
        speed = 25.0
        rteam = 1 - team
    elif kind == EventType.CROSS:
        end = np.array([s * (hl - 11.0), rng.normal(0, 6.0)])
        rteam = -1
    elif kind == EventType.CLEARANCE:
        end = ball + np.array([s * 40.0, rng.normal(0, 15.0)])
        rteam = -1
        speed = 20.0
    elif kind == EventType.PASS:
        mates = np.nonzero((team_of == team) & (np.arange(len(team_of)) != holder))[0]
        d = x[mates] - ball
        dist = np.linalg.norm(d, axis=1)
        forward = d[:, 0] * s
        w = np.exp(-np.abs(dist - 14.0) / cfg.pass_length_sigma) * np.exp(cfg.forward_bias * forward)
        w[is_gk[mates]] *= 0.2
        receiver = int(rng.choice(mates, p=w / w.sum()))
        lead = np.linalg.norm(x[receiver] - ball) / speed
        end = x[receiver] + v[receiver] * lead
        opp = np.nonzero(team_of != team)[0]
        mid = 0.5 * (ball + end)
        pressure = np.min(np.linalg.norm(x[opp] - mid, axis=1))
        if rng.random() < cfg.turnover_scale * (0.35 * np.exp(-pressure / 4.0) + 0.08):
            rteam = 1 - team
            receiver = -1
    else:
        end = ball + v[holder] * 1.5
        rteam = team
    end[0] = np.clip(end[0], -hl, hl)
    end[1] = np.clip(end[1], -pitch.half_width, pitch.half_width)
    ev = RawEvent(
        t=float(tt),
        type_code=kind.name.lower(),
        possessing_team=TEAMS[team],
        x_start=(float(ball[0]), float(ball[1])),
        x_end=(float(end[0]), float(end[1])),
    )
    if kind in (EventType.DRIBBLE, EventType.OTHER):
        return ev, None, -1, holder
    dist = float(np.linalg.norm(end - ball))
    if dist < 0.5:
        return ev, None, -1, holder
    flight = (ball.copy(), end, float(tt), dist / speed, rteam, kind)
    return ev, flight, receiver, -1


def generate_corpus(cfg: SynthConfig, pitch: PitchSpec | None = None) -> list[Match]:
    return [generate_match(cfg, i, pitch, match_id=i) for i in range(cfg.n_matches)]


# ----------------------------------------------------------------------------
# file output in the ingest formats


def write_match(match: Match, out_dir, prefix: str | None = None) -> dict[str, Path]:
    """Write tracking, event and roster CSVs plus the velocity truth archive."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    prefix = prefix or f"match_{match.match_id:03d}"
    tr = match.tracking
    paths = {
        "tracking": out_dir / f"{prefix}_tracking.csv",
        "events": out_dir / f"{prefix}_events.csv",
        "roster": out_dir / f"{prefix}_roster.csv",
        "truth": out_dir / f"{prefix}_truth.npz",
    }
    with open(paths["tracking"], "w", newline="") as fh:
        fh.write("frame,t,entity_id,team,x,y\n")
        lines = []
        for i in range(tr.n_frames):
            f, tt = tr.frame_no[i], tr.t[i]
            bx, by = tr.ball[i]
            if np.isfinite(bx) and np.isfinite(by):
                lines.append(f"{f},{tt:.2f},ball,none,{bx:.4f},{by:.4f}\n")
            for j, (pid, team) in enumerate(zip(tr.ids, tr.teams)):
                px, py = tr.players[i, j]
                lines.append(f"{f},{tt:.2f},{pid},{team},{px:.4f},{py:.4f}\n")
        fh.writelines(lines)
    with open(paths["events"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "type", "possessing_team", "x_start", "y_start", "x_end", "y_end"])
        for e in match.events:
            w.writerow([f"{e.t:.2f}", e.type_code, e.possessing_team,
                        f"{e.x_start[0]:.4f}", f"{e.x_start[1]:.4f}", f"{e.x_end[0]:.4f}", f"{e.x_end[1]:.4f}"])
    with open(paths["roster"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["entity_id", "team", "is_goalkeeper"])
        gk = tr.goalkeepers if tr.goalkeepers is not None else np.zeros(len(tr.ids), bool)
        for pid, team, g in zip(tr.ids, tr.teams, gk):
            w.writerow([pid, team, int(g)])
    np.savez_compressed(paths["truth"], t=tr.t, velocities=match.velocities)
    return paths
