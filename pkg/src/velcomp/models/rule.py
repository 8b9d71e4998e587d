"""Rule-based velocity completion baseline."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core_types import EventFrame, PitchSpec


@dataclass(frozen=True)
class RuleConfig:
    rule_speed: float = 3.0
    stop_radius: float = 0.5


def rule_based_velocity(frame: EventFrame, rule_cfg: RuleConfig | None = None, pitch: PitchSpec | None = None) -> np.ndarray:
    """Velocities (22, 2) in m/s, in the frame's own orientation.

    The ball holder inherits the ball velocity.  Every other player runs at
    ``rule_speed`` straight towards the ball, except players already within
    ``stop_radius`` of it, who stand still.
    """
    cfg = rule_cfg or RuleConfig()
    x = frame.player_x
    ball = frame.x_ball
    v_ball = frame.v_ball
    if frame.normalized:
        scale = (pitch or PitchSpec()).scale
        x, ball, v_ball = x * scale, ball * scale, v_ball * scale
    to_ball = ball[None, :] - x
    dist = np.linalg.norm(to_ball, axis=1)
    out = np.zeros_like(x)
    far = dist >= cfg.stop_radius
    out[far] = cfg.rule_speed * to_ball[far] / dist[far, None]
    out[frame.holder] = v_ball
    return out
