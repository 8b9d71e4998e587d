"""Shared domain vocabulary: pitch geometry, event frames, windows, datasets.

Coordinates use a center-of-pitch origin with x along the pitch length.
Player arrays are always ordered by a fixed slot index (0..N-1) that stays
stable across all frames of a match.
"""
from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

N_PLAYERS = 22


class EventType(enum.IntEnum):
    PASS = 0
    SHOT = 1
    CROSS = 2
    DRIBBLE = 3
    CLEARANCE = 4
    OTHER = 5

    @classmethod
    def parse(cls, code) -> "EventType":
        """Map a raw type code (name or integer) onto the fixed taxonomy."""
        if isinstance(code, EventType):
            return code
        if isinstance(code, (int, np.integer)):
            try:
                return cls(int(code))
            except ValueError:
                return cls.OTHER
        try:
            return cls[str(code).strip().upper()]
        except KeyError:
            return cls.OTHER


N_EVENT_TYPES = len(EventType)


class AttackDir(enum.IntEnum):
    LEFT_TO_RIGHT = 1
    RIGHT_TO_LEFT = -1

    @property
    def sign(self) -> int:
        return int(self.value)


@dataclass(frozen=True)
class PitchSpec:
    length: float = 105.0
    width: float = 68.0
    grid_nx: int = 50
    grid_ny: int = 32

    def __post_init__(self):
        if not (self.length > 0 and self.width > 0):
            raise ValueError(f"pitch dimensions must be positive, got {self.length}x{self.width}")
        if self.grid_nx < 1 or self.grid_ny < 1:
            raise ValueError("grid must have at least one cell per axis")

    @property
    def half_length(self) -> float:
        return self.length / 2.0

    @property
    def half_width(self) -> float:
        return self.width / 2.0

    @property
    def n_cells(self) -> int:
        return self.grid_nx * self.grid_ny

    @property
    def scale(self) -> np.ndarray:
        return np.array([self.half_length, self.half_width])

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Cell-center coordinates ``(xs, ys)`` with shapes (nx,) and (ny,).

        ``ys`` runs from the top touchline (+width/2) downwards so that row 0
        of a grid is the top of the pitch.
        """
        dx = self.length / self.grid_nx
        dy = self.width / self.grid_ny
        xs = -self.half_length + dx * (np.arange(self.grid_nx) + 0.5)
        ys = self.half_width - dy * (np.arange(self.grid_ny) + 0.5)
        return xs, ys

    def in_bounds(self, xy: np.ndarray, tol: float = 5.0) -> bool:
        xy = np.asarray(xy, dtype=float)
        return bool(
            np.all(np.abs(xy[..., 0]) <= self.half_length + tol)
            and np.all(np.abs(xy[..., 1]) <= self.half_width + tol)
        )


@dataclass(frozen=True)
class PlayerFlags:
    is_teammate_of_possessing_team: bool
    is_ball_holder: bool
    is_goalkeeper: bool


@dataclass(frozen=True)
class PlayerRecord:
    x: np.ndarray
    v: np.ndarray
    flags: PlayerFlags


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class EventFrame:
    """One event-time snapshot of the ball and all players.

    Player data lives in slot-ordered arrays; ``players`` exposes the same
    data as a list of records.  ``normalized`` marks frames that have been
    through :func:`normalize_frame`.
    """

    event_index: int
    event_type: EventType
    t: float
    x_ball: np.ndarray
    v_ball: np.ndarray
    x_end: np.ndarray
    player_x: np.ndarray
    player_v: np.ndarray
    teammate: np.ndarray
    holder: np.ndarray
    goalkeeper: np.ndarray
    attack_dir: AttackDir
    match_id: int = 0
    half: int = 1
    normalized: bool = False

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "event_type", EventType.parse(self.event_type))
        set_(self, "attack_dir", AttackDir(self.attack_dir))
        for name in ("x_ball", "v_ball", "x_end"):
            set_(self, name, _frozen(getattr(self, name)).reshape(2))
        for name in ("player_x", "player_v"):
            arr = _frozen(getattr(self, name))
            if arr.ndim != 2 or arr.shape[1] != 2:
                raise ValueError(f"{name} must have shape (N, 2), got {arr.shape}")
            set_(self, name, arr)
        n = self.player_x.shape[0]
        if self.player_v.shape[0] != n:
            raise ValueError(f"player_x has {n} rows but player_v has {self.player_v.shape[0]}")
        for name in ("teammate", "holder", "goalkeeper"):
            arr = _frozen(getattr(self, name), dtype=bool).reshape(-1)
            if arr.shape[0] != n:
                raise ValueError(f"{name} must have {n} entries, got {arr.shape[0]}")
            set_(self, name, arr)
        if self.holder.sum() > 1:
            raise ValueError("at most one player may be the ball holder")

    @property
    def n_players(self) -> int:
        return self.player_x.shape[0]

    @property
    def players(self) -> list[PlayerRecord]:
        return [
            PlayerRecord(
                self.player_x[j],
                self.player_v[j],
                PlayerFlags(bool(self.teammate[j]), bool(self.holder[j]), bool(self.goalkeeper[j])),
            )
            for j in range(self.n_players)
        ]

    @property
    def player_attack_sign(self) -> np.ndarray:
        """+1 for players whose team attacks left to right, -1 otherwise."""
        s = self.attack_dir.sign
        return np.where(self.teammate, s, -s).astype(float)

    def replace(self, **changes) -> "EventFrame":
        return dataclasses.replace(self, **changes)

    def validate(self, pitch: PitchSpec | None = None) -> None:
        """Raise ``ValueError`` if the frame breaks a complete-frame invariant."""
        pitch = pitch or PitchSpec()
        if self.n_players != N_PLAYERS:
            raise ValueError(f"complete frames have {N_PLAYERS} players, got {self.n_players}")
        arrays = (self.x_ball, self.v_ball, self.player_x, self.player_v)
        if not all(np.all(np.isfinite(a)) for a in arrays):
            raise ValueError(f"event {self.event_index}: non-finite coordinates")
        if not self.normalized:
            if not pitch.in_bounds(self.player_x) or not pitch.in_bounds(self.x_ball):
                raise ValueError(f"event {self.event_index}: position outside pitch bounds")
        if self.goalkeeper.sum() != 2 or (self.goalkeeper & self.teammate).sum() != 1:
            raise ValueError(f"event {self.event_index}: expected one goalkeeper per team")


@dataclass(frozen=True, eq=False)
class EventWindow:
    frames: tuple[EventFrame, ...]

    def __post_init__(self):
        frames = tuple(self.frames)
        object.__setattr__(self, "frames", frames)
        if not frames:
            raise ValueError("a window needs at least one frame")
        first = frames[0]
        for prev, cur in zip(frames, frames[1:]):
            if cur.event_index != prev.event_index + 1:
                raise ValueError(
                    f"window frames must be consecutive, got {prev.event_index} then {cur.event_index}"
                )
        if any(f.half != first.half or f.match_id != first.match_id for f in frames):
            raise ValueError("window frames must come from one match half")

    @property
    def target(self) -> EventFrame:
        return self.frames[-1]

    @property
    def k(self) -> int:
        return len(self.frames)

    def __len__(self) -> int:
        return len(self.frames)

    def __iter__(self) -> Iterator[EventFrame]:
        return iter(self.frames)


@dataclass
class Dataset:
    kind: str
    split: str
    samples: list = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in ("D", "Dstar"):
            raise ValueError(f"unknown dataset kind {self.kind!r}")
        if self.split not in ("train", "val", "test"):
            raise ValueError(f"unknown split {self.split!r}")

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def targets(self) -> list[EventFrame]:
        if self.kind == "D":
            return list(self.samples)
        return [w.target for w in self.samples]

    @staticmethod
    def target_key(frame: EventFrame) -> tuple[int, int, int]:
        return (frame.match_id, frame.half, frame.event_index)


def attacking_third_test(frame: EventFrame, pitch: PitchSpec | None = None) -> bool:
    """True when the ball lies in the possessing team's final third.

    The boundary ``x = length / 6`` (after orienting play left to right) is
    counted as inside the attacking third.
    """
    pitch = pitch or PitchSpec()
    x = float(frame.x_ball[0])
    if frame.normalized:
        x *= pitch.half_length
    # slack absorbs the rescaling round-off of normalized frames
    return x * frame.attack_dir.sign >= pitch.length / 6.0 - 1e-9


def normalize_frame(frame: EventFrame, pitch: PitchSpec | None = None, sign: int | None = None) -> EventFrame:
    """Orient play left to right and scale coordinates to [-1, 1].

    Positions and velocities are point-reflected through the pitch center
    when the possessing team attacks right to left, then divided by
    (half-length, half-width).  ``sign`` overrides the reflection (+1 keeps
    orientation, -1 reflects); windows use it to orient every frame by the
    target event.  Already-normalized frames are returned unchanged.
    """
    if frame.normalized:
        return frame
    pitch = pitch or PitchSpec()
    arrays = (frame.x_ball, frame.v_ball, frame.x_end, frame.player_x)
    if not all(np.all(np.isfinite(a)) for a in arrays):
        raise ValueError(f"event {frame.event_index}: cannot normalize non-finite coordinates")
    s = frame.attack_dir.sign if sign is None else int(sign)
    scale = pitch.scale
    new_dir = AttackDir(frame.attack_dir.sign * s)
    return frame.replace(
        x_ball=s * frame.x_ball / scale,
        v_ball=s * frame.v_ball / scale,
        x_end=s * frame.x_end / scale,
        player_x=s * frame.player_x / scale,
        player_v=s * frame.player_v / scale,
        attack_dir=new_dir,
        normalized=True,
    )


def denormalize_frame(frame: EventFrame, original_dir: AttackDir, pitch: PitchSpec | None = None) -> EventFrame:
    """Inverse of :func:`normalize_frame` given the pre-normalization direction."""
    if not frame.normalized:
        return frame
    pitch = pitch or PitchSpec()
    original_dir = AttackDir(original_dir)
    s = original_dir.sign * frame.attack_dir.sign
    scale = pitch.scale
    return frame.replace(
        x_ball=s * frame.x_ball * scale,
        v_ball=s * frame.v_ball * scale,
        x_end=s * frame.x_end * scale,
        player_x=s * frame.player_x * scale,
        player_v=s * frame.player_v * scale,
        attack_dir=original_dir,
        normalized=False,
    )


def normalize_window(window: EventWindow, pitch: PitchSpec | None = None) -> EventWindow:
    """Normalize every frame in a window with the target event's orientation."""
    s = window.target.attack_dir.sign
    return EventWindow(tuple(normalize_frame(f, pitch, sign=s) for f in window.frames))


def seeded_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.PCG64(int(seed)))


def child_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent deterministic stream for a (seed, key...) pair."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


def stack_frames(frames: Sequence[EventFrame]) -> dict[str, np.ndarray]:
    """Stack a list of frames into batch arrays keyed by attribute name."""
    return {
        "x_ball": np.stack([f.x_ball for f in frames]),
        "v_ball": np.stack([f.v_ball for f in frames]),
        "x_end": np.stack([f.x_end for f in frames]),
        "player_x": np.stack([f.player_x for f in frames]),
        "player_v": np.stack([f.player_v for f in frames]),
        "teammate": np.stack([f.teammate for f in frames]),
        "holder": np.stack([f.holder for f in frames]),
        "goalkeeper": np.stack([f.goalkeeper for f in frames]),
        "event_type": np.array([int(f.event_type) for f in frames]),
        "attack_sign": np.array([f.attack_dir.sign for f in frames], dtype=float),
    }
