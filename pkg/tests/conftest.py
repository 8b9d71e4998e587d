import numpy as np
import pytest


def numeric_grad(fn, arrays, h=1e-5):
    """Central finite differences of scalar ``fn()`` w.r.t. each array, in place."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = arr[idx]
            arr[idx] = old + h
            fp = fn()
            arr[idx] = old - h
            fm = fn()
            arr[idx] = old
            g[idx] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def assert_grads_close(analytic, numeric, rtol=1e-4, floor=1e-6):
    for a, n in zip(analytic, numeric):
        err = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        assert err.max() < rtol, f"max rel err {err.max():.3g}"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_frame(rng, event_index=0, attack_dir=1, match_id=0, half=1, event_type=0):
    """A random but valid complete frame; player 3 (a teammate) holds the ball."""
    from velcomp.core_types import AttackDir, EventFrame

    px = rng.uniform([-50, -32], [50, 32], size=(22, 2))
    pv = rng.normal(0, 2.0, size=(22, 2))
    teammate = np.arange(22) < 11
    holder = np.zeros(22, bool)
    holder[3] = True
    gk = np.zeros(22, bool)
    gk[[0, 11]] = True
    x_ball = px[3] + rng.normal(0, 0.5, 2)
    return EventFrame(
        event_index=event_index,
        event_type=event_type,
        t=0.04 * event_index,
        x_ball=x_ball,
        v_ball=rng.normal(0, 5.0, 2),
        x_end=rng.uniform([-50, -32], [50, 32]),
        player_x=px,
        player_v=pv,
        teammate=teammate,
        holder=holder,
        goalkeeper=gk,
        attack_dir=AttackDir(attack_dir),
        match_id=match_id,
        half=half,
    )


def make_window(rng, k=3, start=0, attack_dir=1):
    from velcomp.core_types import EventWindow

    return EventWindow(tuple(make_frame(rng, start + i, attack_dir) for i in range(k)))
