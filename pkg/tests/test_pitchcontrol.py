import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_frame
from velcomp import pitchcontrol as pc
from velcomp.core_types import PitchSpec
from velcomp.models import rule_based_velocity

PITCH = PitchSpec()


def random_state(rng, attack_sign=1):
    x = rng.uniform([-50, -32], [50, 32], size=(22, 2))
    v = rng.normal(0, 2.0, size=(22, 2))
    att = np.arange(22) < 11
    gk = np.isin(np.arange(22), [0, 11])
    return pc.GameStateSnapshot(rng.uniform([-45, -30], [45, 30]), x, v, att, gk, attack_sign)


def far_state(near_att=None, near_def=None):
    """Everyone parked in a far corner except optional chosen players."""
    x = np.tile([-50.0, -33.0], (22, 1))
    v = np.zeros((22, 2))
    if near_att is not None:
        x[1] = near_att
    if near_def is not None:
        x[12] = near_def
    att = np.arange(22) < 11
    return x, v, att


def scalar_ppcf(state, r, p):
    """Loop-per-player forward Euler written independently of the vectorized code."""
    t0 = math.dist(r, state.ball) / p.ball_speed
    k = math.pi / math.sqrt(3.0) / p.tti_sigma
    taus = []
    for j in range(22):
        ax = state.x[j, 0] + state.v[j, 0] * p.reaction_time
        ay = state.x[j, 1] + state.v[j, 1] * p.reaction_time
        taus.append(p.reaction_time + math.hypot(r[0] - ax, r[1] - ay) / p.max_speed)
    acc = [0.0] * 22
    total = 0.0
    for i in range(1, int(round(p.max_T / p.int_dt)) + 1):
        T = t0 + i * p.int_dt
        rem = 1.0 - total
        inc = [rem * (1.0 / (1.0 + math.exp(-k * (T - taus[j])))) * p.lambda_control * p.int_dt for j in range(22)]
        s = sum(inc)
        if s > rem:
            inc = [a * rem / s for a in inc]
        acc = [a + b for a, b in zip(acc, inc)]
        total = sum(acc)
        if total >= 1.0 - p.converge_tol:
            break
    att = sum(a for a, m in zip(acc, state.attacking) if m)
    return att, total - att


# ----------------------------------------------------------------------------
# time to intercept


def test_tti_pure_reaction():
    assert pc.time_to_intercept([3.0, 4.0], [0.0, 0.0], [3.0, 4.0]) == pytest.approx(0.7)


def test_tti_stationary_five_metres():
    assert pc.time_to_intercept([0.0, 0.0], [0.0, 0.0], [5.0, 0.0]) == pytest.approx(1.7)


def test_tti_matches_dense_arrival_search(rng):
    p = pc.PPCFParams()
    Ts = np.arange(0.0, 40.0, 1e-4)
    for _ in range(20):
        x, v, r = rng.uniform(-30, 30, 2), rng.normal(0, 3, 2), rng.uniform(-30, 30, 2)
        drift = x + v * p.reaction_time
        # earliest time whose reachable disc (after reacting) covers r
        reach = np.where(Ts >= p.reaction_time, p.max_speed * (Ts - p.reaction_time), -1.0)
        T_first = Ts[np.argmax(reach >= np.linalg.norm(r - drift))]
        assert pc.time_to_intercept(x, v, r, p) == pytest.approx(T_first, abs=2e-4)


def test_params_must_be_positive():
    with pytest.raises(ValueError, match="int_dt"):
        pc.PPCFParams(int_dt=0.0)


def test_snapshot_validation():
    x, v, att = far_state()
    with pytest.raises(ValueError, match="22 players"):
        pc.GameStateSnapshot([0, 0], x[:21], v[:21], att[:21], att[:21])
    v[0, 0] = np.nan
    with pytest.raises(ValueError, match="finite"):
        pc.GameStateSnapshot([0, 0], x, v, att, att)


# ----------------------------------------------------------------------------
# PPCF


def test_lone_attacker_controls_cell():
    x, v, att = far_state(near_att=[12.0, 0.0], near_def=[50.0, 0.0])
    x[2:11] = [-50, 33]
    state = pc.GameStateSnapshot([0.0, 0.0], x, v, att, np.zeros(22, bool))
    out = pc.ppcf_cell(state, [10.0, 0.0])
    assert out["att"] > 0.95
    assert out["converged"]


def test_zero_rate_accrues_nothing(rng):
    state = random_state(rng)
    out = pc.ppcf_cell(state, [0.0, 0.0], pc.PPCFParams(lambda_control=1e-9))
    assert out["att"] < 1e-6 and out["def"] < 1e-6
    assert not out["converged"]


def test_mirror_duel_splits_evenly():
    x, v, att = far_state(near_att=[-6.0, 1.0], near_def=[6.0, 1.0])
    v[1], v[12] = [1.0, -0.5], [-1.0, -0.5]
    x[2:11], x[13:22] = [-50.0, 33.0], [50.0, 33.0]
    x[0], x[11] = [-50.0, 33.0], [50.0, 33.0]
    state = pc.GameStateSnapshot([0.0, 20.0], x, v, att, np.zeros(22, bool))
    p = pc.PPCFParams(converge_tol=1e-7)
    out = pc.ppcf_cell(state, [0.0, 0.0], p)
    assert abs(out["att"] - out["def"]) < 1e-6
    assert out["att"] == pytest.approx(0.5, abs=1e-6)
    loose = pc.ppcf_cell(state, [0.0, 0.0])
    assert loose["att"] == pytest.approx((1 - 0.01) / 2, abs=0.01)


def test_non_convergence_is_flagged(caplog):
    x, v, att = far_state()
    state = pc.GameStateSnapshot([-50.0, -33.0], x, v, att, np.zeros(22, bool))
    with caplog.at_level("WARNING"):
        out = pc.ppcf_cell(state, [50.0, 33.0], pc.PPCFParams(max_T=1.0))
    assert not out["converged"]
    assert "did not converge" in caplog.text
    assert 0.0 <= out["att"] + out["def"] < 0.99


def test_grid_matches_hand_integration(rng):
    state = random_state(rng)
    p = pc.PPCFParams()
    grid = pc.ppcf_grid(state, PITCH, p)
    xs, ys = PITCH.cell_centers()
    for iy, ix in [(0, 0), (16, 25), (31, 49)]:
        att, _ = scalar_ppcf(state, (xs[ix], ys[iy]), p)
        assert grid.values[iy, ix] == pytest.approx(att, abs=1e-12)


def test_cells_are_independent(rng):
    state = random_state(rng)
    cells = pc.cell_points(PITCH)
    batch = pc.ppcf_cells(state, cells)
    for c in rng.choice(len(cells), 15, replace=False):
        alone = pc.ppcf_cells(state, cells[c:c + 1])
        assert alone.att[0] == batch.att[c] and alone.defn[0] == batch.defn[c]


def test_reflected_state_gives_reflected_grid(rng):
    state = random_state(rng)
    flip = np.array([-1.0, 1.0])
    mirrored = pc.GameStateSnapshot(state.ball * flip, state.x * flip, state.v * flip, state.attacking,
                                    state.goalkeeper, -state.attack_sign)
    a = pc.ppcf_grid(state).values
    b = pc.ppcf_grid(mirrored).values
    np.testing.assert_allclose(b, a[:, ::-1], atol=1e-9)


def test_grid_values_are_probabilities(rng):
    g = pc.ppcf_grid(random_state(rng))
    assert g.values.shape == (32, 50)
    assert np.all((g.values >= 0) & (g.values <= 1))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6), dx=st.floats(-20, 20), dy=st.floats(-20, 20))
def test_translation_invariance(seed, dx, dy):
    rng = np.random.default_rng(seed)
    state = random_state(rng)
    r = rng.uniform(-40, 40, 2)
    s = np.array([dx, dy])
    moved = pc.GameStateSnapshot(state.ball + s, state.x + s, state.v, state.attacking, state.goalkeeper)
    a, b = pc.ppcf_cell(state, r), pc.ppcf_cell(moved, r + s)
    assert abs(a["att"] - b["att"]) < 1e-12 and abs(a["def"] - b["def"]) < 1e-12


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_cell_invariants(seed):
    rng = np.random.default_rng(seed)
    state = random_state(rng)
    r = rng.uniform([-52, -34], [52, 34])
    out = pc.ppcf_cell(state, r, return_history=True)
    assert out["att"] >= 0 and out["def"] >= 0 and out["att"] + out["def"] <= 1 + 1e-12
    assert np.all(np.diff(out["history"]) >= 0)
    swapped = pc.ppcf_cell(state.swap_teams(), r)
    assert swapped["att"] == out["def"] and swapped["def"] == out["att"]


# ----------------------------------------------------------------------------
# transition, scoring, OBSO


def test_transition_sums_to_one_and_peaks_at_ball(rng):
    state = random_state(rng)
    g = pc.transition_grid(state)
    assert abs(g.total() - 1.0) < 1e-12
    xs, ys = PITCH.cell_centers()
    iy, ix = np.unravel_index(np.argmax(g.values), g.values.shape)
    assert abs(xs[ix] - state.ball[0]) <= 105 / 50 / 2 + 1e-9
    assert abs(ys[iy] - state.ball[1]) <= 68 / 32 / 2 + 1e-9
    assert pc.transition_grid(state, sigma_T=7.0).values.max() > g.values.max()
    with pytest.raises(ValueError):
        pc.transition_grid(state, sigma_T=0.0)


def test_scoring_closed_forms():
    assert pc.exp_decay_scoring(np.array(0.0)) == 1.0
    assert pc.exp_decay_scoring(np.array(10.0)) == pytest.approx(math.exp(-1.4))
    assert math.exp(-1.4) == pytest.approx(0.2466, abs=1e-4)


@pytest.mark.parametrize("sign", [1, -1])
def test_scoring_decays_away_from_attacked_goal(sign):
    g = pc.scoring_grid(PITCH, sign).values.ravel()
    d = np.linalg.norm(pc.cell_points(PITCH) - [sign * 52.5, 0.0], axis=1)
    order = np.argsort(d, kind="stable")
    assert np.all(np.diff(g[order]) <= 1e-15)
    np.testing.assert_allclose(g, np.exp(-0.14 * d), rtol=1e-14)


def test_scoring_model_is_pluggable():
    g = pc.scoring_grid(PITCH, 1, model=lambda d: np.where(d < 20, 0.3, 0.0))
    assert set(np.unique(g.values)) == {0.0, 0.3}


def test_zero_ppcf_gives_zero_obso(rng):
    state = random_state(rng)
    zero = pc.PitchGrid(np.zeros((32, 50)))
    assert pc.obso_grid(state, ppcf=zero).total == 0.0


def test_obso_matches_brute_force_product(rng):
    for _ in range(5):
        state = random_state(rng, attack_sign=int(rng.choice([-1, 1])))
        res = pc.obso_grid(state)
        xs, ys = PITCH.cell_centers()
        goal = (state.attack_sign * 52.5, 0.0)
        total = 0.0
        for iy, y in enumerate(ys):
            for ix, x in enumerate(xs):
                val = math.exp(-0.14 * math.dist((x, y), goal)) * res.ppcf.values[iy, ix] * res.transition.values[iy, ix]
                assert res.grid.values[iy, ix] == pytest.approx(val, rel=1e-12, abs=1e-300)
                total += val
        assert res.total == pytest.approx(total, rel=1e-10)
        assert 0.0 <= res.total <= 1.0
        assert np.all(res.grid.values <= np.minimum(res.scoring.values, res.transition.values) + 1e-15)


# ----------------------------------------------------------------------------
# Er metrics and comparison


def test_er_metric_cases(rng):
    a = rng.uniform(size=(32, 50))
    assert pc.er_metric(a, a) == 0.0
    assert pc.er_metric(a + 0.1, a) == pytest.approx(0.1)
    b = rng.uniform(size=(32, 50))
    brute = sum(abs(a[i, j] - b[i, j]) for i in range(32) for j in range(50)) / 1600
    assert pc.er_metric(a, b) == pytest.approx(brute, rel=1e-12)
    with pytest.raises(ValueError, match="shapes"):
        pc.er_metric(a, b[:, :10])


def _frames(rng, n=4):
    return [make_frame(rng, i, attack_dir=1 if i % 2 else -1) for i in range(n)]


def test_comparison_with_true_velocities(rng):
    frames = _frames(rng)
    rule = [rule_based_velocity(f) for f in frames]
    rep = pc.compare_completions(frames, [f.player_v for f in frames], rule)
    assert rep.summary["er_ppcf_model"]["mean"] == 0.0 and rep.summary["er_obso_model"]["mean"] == 0.0
    for key in ("ppcf", "obso"):
        w = rep.wins[key]
        assert w["rule"] == 0
        assert w["model"] + w["ties"] == len(frames)


def test_comparison_with_rule_is_all_ties(rng):
    frames = _frames(rng)
    rule = [rule_based_velocity(f) for f in frames]
    rep = pc.compare_completions(frames, [r.copy() for r in rule], rule)
    assert rep.wins["ppcf"] == {"model": 0, "rule": 0, "ties": len(frames)}
    assert rep.wins["obso"] == {"model": 0, "rule": 0, "ties": len(frames)}


def test_comparison_accounting_and_csv(rng, tmp_path):
    frames = _frames(rng, 5)
    rule = [rule_based_velocity(f) for f in frames]
    noisy = [f.player_v + rng.normal(0, 1, (22, 2)) for f in frames]
    rep = pc.compare_completions(frames, noisy, rule)
    for w in rep.wins.values():
        assert w["model"] + w["rule"] + w["ties"] == 5
    rep.write_csv(tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "event_index,er_ppcf_rule,er_ppcf_model,er_obso_rule,er_obso_model"
    assert len(lines) == 6
    assert float(lines[1].split(",")[2]) == rep.rows[0][2]


def test_comparison_rejects_empty():
    with pytest.raises(ValueError, match="no events"):
        pc.compare_completions([], [], [])


# ----------------------------------------------------------------------------
# heatmaps


def test_csv_round_trip(rng, tmp_path):
    g = pc.PitchGrid(rng.uniform(size=(32, 50)))
    pc.export_heatmap(g, tmp_path / "g.csv")
    back = pc.read_grid_csv(tmp_path / "g.csv")
    assert np.array_equal(back.values, g.values)


def test_constant_grid_gives_uniform_image(tmp_path):
    pc.export_heatmap(pc.PitchGrid(np.full((32, 50), 0.3)), tmp_path / "c.ppm", "ppm", cell_px=2)
    img = pc.read_ppm(tmp_path / "c.ppm")
    assert img.shape == (64, 100, 3)
    assert np.all(img == img[0, 0])


def test_colormap_extremes(rng, tmp_path):
    vals = rng.uniform(size=(32, 50))
    pc.export_heatmap(pc.PitchGrid(vals), tmp_path / "h.ppm", "ppm", cell_px=1)
    img = pc.read_ppm(tmp_path / "h.ppm")
    table = pc.red_colormap()
    iy, ix = np.unravel_index(np.argmax(vals), vals.shape)
    assert tuple(img[iy, ix]) == tuple(table[-1]) == (128, 0, 0)
    iy, ix = np.unravel_index(np.argmin(vals), vals.shape)
    assert tuple(img[iy, ix]) == (255, 255, 255)
    # darker (smaller channel sum) for larger values
    assert np.all(np.diff(table.astype(int).sum(axis=1)) <= 0)


def test_heatmap_errors(tmp_path):
    g = pc.PitchGrid(np.zeros((32, 50)))
    with pytest.raises(OSError):
        pc.export_heatmap(g, tmp_path / "missing_dir" / "g.csv")
    with pytest.raises(ValueError, match="format"):
        pc.export_heatmap(g, tmp_path / "g.bmp", "bmp")
    bad = np.zeros((32, 50))
    bad[0, 0] = np.inf
    with pytest.raises(ValueError, match="non-finite"):
        pc.export_heatmap(bad, tmp_path / "g.csv")
