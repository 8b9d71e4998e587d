"""Tracking/event parsing, velocity estimation, event joins and dataset building."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core_types import (
    N_PLAYERS,
    AttackDir,
    Dataset,
    EventFrame,
    EventType,
    EventWindow,
    PitchSpec,
    attacking_third_test,
)
from .synth import DT, RawEvent, Tracking

log = logging.getLogger(__name__)

FRAME_DT = DT
SPLITS = ("train", "val", "test")


class IngestError(ValueError):
    """Malformed input files or an impossible ingest configuration."""


class VelocityUnavailable(ValueError):
    pass


@dataclass(frozen=True)
class IngestConfig:
    join_tol: float = 0.06
    holder_radius: float = 3.0
    half_gap: float = 1.0
    k: int = 10

    def __post_init__(self):
        if self.k < 1:
            raise IngestError(f"k must be at least 1, got {self.k}")
        if self.join_tol <= 0 or self.holder_radius <= 0:
            raise IngestError("join_tol and holder_radius must be positive")


@dataclass(frozen=True)
class SplitSpec:
    """Number of matches per split, taken in match-id order."""

    train: int
    val: int
    test: int

    @classmethod
    def proportional(cls, n_matches: int, ratio: tuple[int, int, int] = (40, 8, 7)) -> "SplitSpec":
        """Split ``n_matches`` in the 40/8/7 proportion, at least one match each."""
        if n_matches < 3:
            raise IngestError(f"need at least 3 matches for a train/val/test split, got {n_matches}")
        total = sum(ratio)
        val = max(1, round(n_matches * ratio[1] / total))
        test = max(1, round(n_matches * ratio[2] / total))
        return cls(n_matches - val - test, val, test)

    @property
    def total(self) -> int:
        return self.train + self.val + self.test


@dataclass
class IngestStats:
    n_events: int = 0
    n_joined: int = 0
    dropped: Counter = field(default_factory=Counter)

    def merge(self, other: "IngestStats") -> None:
        self.n_events += other.n_events
        self.n_joined += other.n_joined
        self.dropped.update(other.dropped)


# ----------------------------------------------------------------------------
# file parsing


def read_tracking(path, roster_path=None) -> Tracking:
    """Parse a tracking CSV (``frame,t,entity_id,team,x,y``).

    Player slots are assigned in order of first appearance, sorted by team
    and then id so that the slot order is stable.  Frames in which any of
    the 22 players is absent get NaN positions for that player.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"tracking file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["frame", "t", "entity_id", "team", "x", "y"]:
            raise IngestError(f"{path}: bad tracking header {header}")
        rows = list(reader)
    if not rows:
        raise IngestError(f"{path}: no tracking rows")
    frames = np.array([int(r[0]) for r in rows])
    ts = np.array([float(r[1]) for r in rows])
    ents = [r[2] for r in rows]
    teams = {r[2]: r[3] for r in rows}
    xy = np.array([[float(r[4]), float(r[5])] for r in rows])

    ids = sorted({e for e in ents if e != "ball"}, key=lambda e: (teams[e], e))
    team_names = sorted({teams[e] for e in ids})
    if len(ids) != N_PLAYERS or len(team_names) != 2:
        raise IngestError(f"{path}: expected 22 players in 2 teams, found {len(ids)} in {team_names}")
    slot = {e: j for j, e in enumerate(ids)}

    frame_no, inv = np.unique(frames, return_inverse=True)
    n = len(frame_no)
    t = np.zeros(n)
    t[inv] = ts
    ball = np.full((n, 2), np.nan)
    players = np.full((n, N_PLAYERS, 2), np.nan)
    ent_slot = np.array([slot.get(e, -1) for e in ents])
    is_ball = ent_slot < 0
    ball[inv[is_ball]] = xy[is_ball]
    players[inv[~is_ball], ent_slot[~is_ball]] = xy[~is_ball]

    gk = None
    if roster_path is not None:
        gk = read_roster(roster_path, ids)
    return Tracking(frame_no, t, ball, players, ids, [teams[e] for e in ids], gk)


def read_roster(path, ids: Sequence[str]) -> np.ndarray:
    """Goalkeeper mask over ``ids`` from a roster CSV (``entity_id,team,is_goalkeeper``)."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    flags = {r["entity_id"]: r["is_goalkeeper"].strip() in ("1", "true", "True") for r in rows}
    return np.array([flags.get(e, False) for e in ids])


def read_events(path) -> list[RawEvent]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"event file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        want = ["t", "type", "possessing_team", "x_start", "y_start", "x_end", "y_end"]
        if reader.fieldnames != want:
            raise IngestError(f"{path}: bad event header {reader.fieldnames}")
        events = [
            RawEvent(
                float(r["t"]),
                r["type"],
                r["possessing_team"],
                (float(r["x_start"]), float(r["y_start"])),
                (float(r["x_end"]), float(r["y_end"])),
            )
            for r in reader
        ]
    return sorted(events, key=lambda e: e.t)


# ----------------------------------------------------------------------------
# velocities and joins


def _half_of(track: Tracking, gap: float) -> tuple[np.ndarray, list[tuple[int, int]]]:
    bounds = track.half_bounds(gap)
    half = np.zeros(track.n_frames, dtype=int)
    for h, (a, b) in enumerate(bounds, start=1):
        half[a:b] = h
    return half, bounds


def finite_diff_velocity(positions: np.ndarray, index: int, lo: int = 0, hi: int | None = None,
                         dt: float = FRAME_DT) -> np.ndarray:
    """Velocity of every entity at frame ``index`` from a (frames, entities, 2) array.

    Uses the central difference over +-2 frames.  Where a neighbour is
    missing (NaN) or outside ``[lo, hi)`` the widest available pair of frames
    within +-2 is used instead.  Raises :class:`VelocityUnavailable` when an
    entity has no usable pair.
    """
    positions = np.asarray(positions, dtype=float)
    hi = positions.shape[0] if hi is None else hi
    single = positions.ndim == 2
    if single:
        positions = positions[:, None, :]
    n_ent = positions.shape[1]
    out = np.full((n_ent, 2), np.nan)
    offsets = [o for o in range(-2, 3) if lo <= index + o < hi]
    avail = {o: np.all(np.isfinite(positions[index + o]), axis=1) for o in offsets}
    # candidate pairs, widest (central first) to narrowest
    pairs = sorted(
        ((a, b) for a in offsets for b in offsets if b > a),
        key=lambda p: (-(p[1] - p[0]), abs(p[0] + p[1])),
    )
    todo = np.ones(n_ent, dtype=bool)
    for a, b in pairs:
        ok = todo & avail[a] & avail[b]
        if ok.any():
            out[ok] = (positions[index + b, ok] - positions[index + a, ok]) / ((b - a) * dt)
            todo &= ~ok
        if not todo.any():
            break
    if todo.any():
        raise VelocityUnavailable(f"velocity unavailable for entities {np.nonzero(todo)[0].tolist()}")
    return out[0] if single else out


def _goalkeepers(track: Tracking, a: int, b: int) -> np.ndarray:
    """Roster goalkeepers, or per team the player furthest from the halfway line on average."""
    if track.goalkeepers is not None and track.goalkeepers.sum() == 2:
        return np.asarray(track.goalkeepers, dtype=bool)
    mean_x = np.nanmean(track.players[a:b, :, 0], axis=0)
    gk = np.zeros(N_PLAYERS, dtype=bool)
    teams = np.array(track.teams)
    for team in sorted(set(track.teams)):
        idx = np.nonzero(teams == team)[0]
        gk[idx[np.argmax(np.abs(mean_x[idx]))]] = True
    return gk


def join_events(
    track: Tracking,
    events: Sequence[RawEvent],
    match_id: int = 0,
    cfg: IngestConfig | None = None,
    pitch: PitchSpec | None = None,
    stats: IngestStats | None = None,
) -> list[EventFrame]:
    """Attach tracking positions and velocities to every event.

    ``event_index`` is the event's ordinal in the full (time-sorted) event
    stream, so a dropped event leaves a gap that later breaks windows.
    """
    cfg = cfg or IngestConfig()
    pitch = pitch or PitchSpec()
    stats = stats if stats is not None else IngestStats()
    half, bounds = _half_of(track, cfg.half_gap)
    teams = np.array(track.teams)
    gk_by_half = {}
    dir_by_half = {}
    for h, (a, b) in enumerate(bounds, start=1):
        gk = _goalkeepers(track, a, b)
        gk_by_half[h] = gk
        # a team attacks away from its own goalkeeper
        dirs = {}
        for team in sorted(set(track.teams)):
            g = np.nonzero(gk & (teams == team))[0][0]
            gx = np.nanmean(track.players[a:b, g, 0])
            dirs[team] = AttackDir.LEFT_TO_RIGHT if gx < 0 else AttackDir.RIGHT_TO_LEFT
        dir_by_half[h] = dirs

    out: list[EventFrame] = []
    for idx, ev in enumerate(sorted(events, key=lambda e: e.t)):
        stats.n_events += 1
        i = int(np.searchsorted(track.t, ev.t))
        cands = [j for j in (i - 1, i) if 0 <= j < track.n_frames]
        if not cands:
            stats.dropped["no_tracking_frame"] += 1
            continue
        j = min(cands, key=lambda c: abs(track.t[c] - ev.t))
        if abs(track.t[j] - ev.t) > cfg.join_tol + 1e-9:
            stats.dropped["no_tracking_frame"] += 1
            log.debug("event %d at t=%.2f has no tracking frame within %.3f s", idx, ev.t, cfg.join_tol)
            continue
        if ev.possessing_team not in dir_by_half.get(half[j], {}):
            stats.dropped["unknown_team"] += 1
            continue
        x_ball = track.ball[j]
        if not np.all(np.isfinite(x_ball)):
            stats.dropped["missing_ball_position"] += 1
            continue
        px = track.players[j]
        if not np.all(np.isfinite(px)):
            stats.dropped["incomplete_frame"] += 1
            continue
        a, b = bounds[half[j] - 1]
        try:
            v_ball = finite_diff_velocity(track.ball, j, a, b)
        except VelocityUnavailable:
            stats.dropped["missing_ball_velocity"] += 1
            continue
        try:
            pv = finite_diff_velocity(track.players, j, a, b)
        except VelocityUnavailable:
            stats.dropped["missing_player_velocity"] += 1
            continue
        mates = teams == ev.possessing_team
        holder = np.zeros(N_PLAYERS, dtype=bool)
        d = np.linalg.norm(px - x_ball, axis=1)
        d_mates = np.where(mates, d, np.inf)
        jh = int(np.argmin(d_mates))
        if d_mates[jh] <= cfg.holder_radius:
            holder[jh] = True
        frame = EventFrame(
            event_index=idx,
            event_type=EventType.parse(ev.type_code),
            t=float(ev.t),
            x_ball=x_ball,
            v_ball=v_ball,
            x_end=np.array(ev.x_end, dtype=float),
            player_x=px,
            player_v=pv,
            teammate=mates,
            holder=holder,
            goalkeeper=gk_by_half[half[j]],
            attack_dir=dir_by_half[half[j]][ev.possessing_team],
            match_id=match_id,
            half=int(half[j]),
        )
        try:
            frame.validate(pitch)
        except ValueError:
            stats.dropped["invalid_frame"] += 1
            continue
        out.append(frame)
        stats.n_joined += 1
    return out


# ----------------------------------------------------------------------------
# datasets


def build_windows(frames: Sequence[EventFrame], k: int, pitch: PitchSpec | None = None) -> list[EventWindow]:
    """Windows of ``k`` consecutive events ending at each attacking-third frame of one match."""
    by_key = {(f.half, f.event_index): f for f in frames}
    windows = []
    for f in frames:
        if not attacking_third_test(f, pitch):
            continue
        hist = [by_key.get((f.half, f.event_index - o)) for o in range(k - 1, -1, -1)]
        if all(h is not None for h in hist):
            windows.append(EventWindow(tuple(hist)))
    return windows


def build_datasets(
    frames_by_match: Mapping[int, Sequence[EventFrame]],
    k: int = 10,
    split_spec: SplitSpec | None = None,
    pitch: PitchSpec | None = None,
) -> dict[tuple[str, str], Dataset]:
    """D (attacking-third frames) and D* (k-event windows) for each split.

    Matches are assigned to splits in ascending id order.  The D test set is
    restricted to the targets of the D* test windows so that both test sets
    score identical events.
    """
    if k < 1:
        raise IngestError(f"k must be at least 1, got {k}")
    ids = sorted(frames_by_match)
    split_spec = split_spec or SplitSpec.proportional(len(ids))
    if split_spec.total > len(ids):
        raise IngestError(f"split spec needs {split_spec.total} matches, only {len(ids)} given")
    if min(split_spec.train, split_spec.val, split_spec.test) < 1:
        raise IngestError("every split needs at least one match")
    assign = {}
    cursor = 0
    for name in SPLITS:
        n = getattr(split_spec, name)
        for m in ids[cursor:cursor + n]:
            assign[m] = name
        cursor += n
    out = {(kind, s): Dataset(kind, s) for kind in ("D", "Dstar") for s in SPLITS}
    for m in ids:
        if m not in assign:
            continue
        s = assign[m]
        frames = sorted(frames_by_match[m], key=lambda f: f.event_index)
        out[("D", s)].samples.extend(f for f in frames if attacking_third_test(f, pitch))
        out[("Dstar", s)].samples.extend(build_windows(frames, k, pitch))
    keys = {Dataset.target_key(w.target) for w in out[("Dstar", "test")].samples}
    out[("D", "test")].samples = [f for f in out[("D", "test")].samples if Dataset.target_key(f) in keys]
    return out


# ----------------------------------------------------------------------------
# serialization


def frame_to_record(f: EventFrame) -> dict:
    return {
        "match_id": f.match_id,
        "half": f.half,
        "event_index": f.event_index,
        "event_type": f.event_type.name.lower(),
        "t": f.t,
        "attack_dir": f.attack_dir.name.lower(),
        "normalized": f.normalized,
        "x_ball": f.x_ball.tolist(),
        "v_ball": f.v_ball.tolist(),
        "x_end": f.x_end.tolist(),
        "players": [
            {
                "x": f.player_x[j].tolist(),
                "v": f.player_v[j].tolist(),
                "teammate": bool(f.teammate[j]),
                "holder": bool(f.holder[j]),
                "goalkeeper": bool(f.goalkeeper[j]),
            }
            for j in range(f.n_players)
        ],
    }


def record_to_frame(r: dict) -> EventFrame:
    ps = r["players"]
    return EventFrame(
        event_index=r["event_index"],
        event_type=EventType.parse(r["event_type"]),
        t=r["t"],
        x_ball=r["x_ball"],
        v_ball=r["v_ball"],
        x_end=r["x_end"],
        player_x=[p["x"] for p in ps],
        player_v=[p["v"] for p in ps],
        teammate=[p["teammate"] for p in ps],
        holder=[p["holder"] for p in ps],
        goalkeeper=[p["goalkeeper"] for p in ps],
        attack_dir=AttackDir[r["attack_dir"].upper()],
        match_id=r["match_id"],
        half=r["half"],
        normalized=r.get("normalized", False),
    )


def dataset_filename(kind: str, split: str) -> str:
    return f"{kind}_{split}.jsonl"


def write_dataset(ds: Dataset, path) -> None:
    with open(path, "w") as fh:
        for s in ds.samples:
            rec = frame_to_record(s) if ds.kind == "D" else {"frames": [frame_to_record(f) for f in s.frames]}
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def read_dataset(path, kind: str | None = None, split: str | None = None) -> Dataset:
    """Load a dataset file; kind and split default to the ``<kind>_<split>.jsonl`` name."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    if kind is None or split is None:
        stem_kind, _, stem_split = path.stem.partition("_")
        kind, split = kind or stem_kind, split or stem_split
    samples = []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            if kind == "D":
                samples.append(record_to_frame(rec))
            else:
                samples.append(EventWindow(tuple(record_to_frame(r) for r in rec["frames"])))
    return Dataset(kind, split, samples)


def config_hash(*configs) -> str:
    """Stable short hash of JSON-serializable configs (dataclasses allowed)."""
    payload = [asdict(c) if hasattr(c, "__dataclass_fields__") else c for c in configs]
    blob = json.dumps(payload, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def make_manifest(datasets: Mapping[tuple[str, str], Dataset], stats: IngestStats, cfg: IngestConfig,
                  split_spec: SplitSpec, match_splits: Mapping[str, list[int]], extra: dict | None = None) -> dict:
    counts = {f"{kind}_{split}": len(ds) for (kind, split), ds in sorted(datasets.items())}
    return {
        "format": "velcomp-datasets",
        "version": 1,
        "config_hash": config_hash(cfg, split_spec, extra or {}),
        "k": cfg.k,
        "counts": counts,
        "splits": {k: list(v) for k, v in match_splits.items()},
        "events": stats.n_events,
        "joined": stats.n_joined,
        "dropped": dict(sorted(stats.dropped.items())),
        "files": {f"{kind}_{split}": dataset_filename(kind, split) for (kind, split) in sorted(datasets)},
        "extra": extra or {},
    }


def match_split_ids(ids: Iterable[int], split_spec: SplitSpec) -> dict[str, list[int]]:
    ids = sorted(ids)
    out, cursor = {}, 0
    for name in SPLITS:
        n = getattr(split_spec, name)
        out[name] = ids[cursor:cursor + n]
        cursor += n
    return out


def ingest_matches(
    matches: Iterable[tuple[int, Tracking, Sequence[RawEvent]]],
    cfg: IngestConfig | None = None,
    split_spec: SplitSpec | None = None,
    pitch: PitchSpec | None = None,
    extra: dict | None = None,
):
    """Join every match and build datasets; returns ``(datasets, manifest)``."""
    cfg = cfg or IngestConfig()
    stats = IngestStats()
    frames_by_match = {}
    for match_id, track, events in matches:
        frames_by_match[match_id] = join_events(track, events, match_id, cfg, pitch, stats)
    split_spec = split_spec or SplitSpec.proportional(len(frames_by_match))
    datasets = build_datasets(frames_by_match, cfg.k, split_spec, pitch)
    manifest = make_manifest(datasets, stats, cfg, split_spec, match_split_ids(frames_by_match, split_spec), extra)
    return datasets, manifest


def discover_matches(in_dir) -> list[tuple[int, Path, Path, Path | None]]:
    """Find ``match_<id>_tracking.csv`` / ``_events.csv`` (and optional ``_roster.csv``) files."""
    in_dir = Path(in_dir)
    if not in_dir.is_dir():
        raise FileNotFoundError(f"input directory not found: {in_dir}")
    found = []
    for tr in sorted(in_dir.glob("match_*_tracking.csv")):
        stem = tr.name[: -len("_tracking.csv")]
        try:
            mid = int(stem.split("_", 1)[1])
        except ValueError as e:
            raise IngestError(f"cannot parse match id from {tr.name}") from e
        ev = in_dir / f"{stem}_events.csv"
        if not ev.exists():
            raise IngestError(f"missing event file for {tr.name}")
        ro = in_dir / f"{stem}_roster.csv"
        found.append((mid, tr, ev, ro if ro.exists() else None))
    if not found:
        raise IngestError(f"no match_*_tracking.csv files in {in_dir}")
    return found


def ingest_dir(in_dir, out_dir, cfg: IngestConfig | None = None, split_spec: SplitSpec | None = None,
               pitch: PitchSpec | None = None) -> dict:
    """Read CSV matches from ``in_dir`` and write datasets plus ``manifest.json`` to ``out_dir``."""
    cfg = cfg or IngestConfig()

    def load():
        for mid, tr, ev, ro in discover_matches(in_dir):
            yield mid, read_tracking(tr, ro), read_events(ev)

    datasets, manifest = ingest_matches(load(), cfg, split_spec, pitch)
    write_outputs(datasets, manifest, out_dir)
    return manifest


def write_outputs(datasets, manifest: dict, out_dir) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for (kind, split), ds in datasets.items():
        write_dataset(ds, out_dir / dataset_filename(kind, split))
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def load_datasets(data_dir) -> tuple[dict[tuple[str, str], Dataset], dict]:
    data_dir = Path(data_dir)
    mpath = data_dir / "manifest.json"
    if not mpath.exists():
        raise FileNotFoundError(f"manifest not found: {mpath}")
    manifest = json.loads(mpath.read_text())
    out = {}
    for key, fname in manifest["files"].items():
        kind, split = key.split("_", 1)
        out[(kind, split)] = read_dataset(data_dir / fname, kind, split)
    return out, manifest
