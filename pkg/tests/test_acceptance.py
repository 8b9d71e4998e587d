"""Acceptance criteria 1-10.  Each test prints one ``PASS``/``FAIL`` line.

Criterion 4 trains GRNN and MLP on a 20-match synthetic corpus and takes
several minutes.
"""
import json
import math
import time

import numpy as np
import pytest

from conftest import make_frame
from test_models import GRAD_ARCHS, _FixedNoise, _run_graph, check_model_gradients, samples_for
from velcomp import pitchcontrol as pc
from velcomp.cli import main
from velcomp.core_types import Dataset
from velcomp.ingest import SplitSpec, ingest_matches
from velcomp.models import GRAPH, Gaussian, ModelSpec, build_model, kl_diag_gaussian, model_forward, prepare_inputs
from velcomp import diffcore as dc
from velcomp.synth import SynthConfig, generate_corpus
from velcomp.train_eval import TrainConfig, evaluate_rmse, train


@pytest.fixture
def report(capsys):
    """Print one status line per criterion (visible without ``-s``), then assert."""

    def _report(n, title, ok, detail=""):
        with capsys.disabled():
            print(f"\n[criterion {n:2d}] {'PASS' if ok else 'FAIL'}  {title}  {detail}")
        assert ok, f"criterion {n} failed: {detail}"

    return _report


def _run(n, title, report, fn):
    try:
        ok, detail = fn()
    except Exception as e:  # a crash is a failure, reported like one
        report(n, title, False, f"{type(e).__name__}: {e}")
        raise
    report(n, title, ok, detail)


@pytest.fixture(scope="module")
def corpus20():
    ms = generate_corpus(SynthConfig(n_matches=20, seed=0))
    ds, manifest = ingest_matches((m.match_id, m.tracking, m.events) for m in ms)
    return ds, manifest


# ----------------------------------------------------------------------------


def test_criterion_01_gradients(report):
    def check():
        t0 = time.perf_counter()
        worst = {arch: check_model_gradients(arch) for arch in GRAD_ARCHS}
        secs = time.perf_counter() - t0
        bad = {a: w for a, w in worst.items() if not w < 1e-3}
        return not bad and secs < 120, f"max rel err {max(worst.values()):.2e} over {len(worst)} archs, {secs:.1f}s"

    _run(1, "full-loss gradients match finite differences", report, check)


def test_criterion_02_equivariance(report):
    def check():
        worst = 0.0
        for arch in sorted(GRAPH):
            rng = np.random.default_rng(100)
            spec = ModelSpec(arch=arch)
            model = build_model(spec)
            model.eval()
            inputs = prepare_inputs(model, samples_for(spec, rng, n=2, k=3))
            steps = inputs if spec.recurrent else [inputs]
            n = steps[0].n
            draws = [rng.standard_normal((n * 23, spec.num_hid)) for _ in steps]
            base = _run_graph(model, inputs, _FixedNoise(draws))
            for _ in range(100):
                perm = rng.permutation(22)
                node_perm = np.concatenate([[0], perm + 1])
                permuted = [g.permute_players(perm) for g in steps]
                got = _run_graph(model, permuted if spec.recurrent else permuted[0], _FixedNoise(draws, node_perm))
                expect = base.reshape(len(steps), n, 22, 2)[:, :, perm].reshape(base.shape)
                worst = max(worst, float(np.max(np.abs(got - expect))))
        return worst <= 1e-10, f"max deviation {worst:.1e} over {len(GRAPH)} graph archs x 100 permutations"

    _run(2, "player-permutation equivariance", report, check)


def test_criterion_03_kl_oracle(report):
    def check():
        rng = np.random.default_rng(3)
        worst, worst_cf, min_kl = 0.0, 0.0, math.inf
        for _ in range(50):
            d = 3
            mq, mp = rng.normal(0, 1, d), rng.normal(0, 1, d)
            sq, sp = np.exp(rng.uniform(-0.7, 0.7, d)), np.exp(rng.uniform(-0.7, 0.7, d))
            exact = kl_diag_gaussian(Gaussian(dc.Tensor(mq), dc.Tensor(sq)), Gaussian(dc.Tensor(mp), dc.Tensor(sp))).item()
            # 1e5 samples as 5e4 antithetic pairs (unbiased, cancels the linear noise term)
            eps = rng.standard_normal((50_000, d))
            z = np.concatenate([mq + sq * eps, mq - sq * eps])
            log_q = -0.5 * np.sum(((z - mq) / sq) ** 2 + 2 * np.log(sq), axis=1)
            log_p = -0.5 * np.sum(((z - mp) / sp) ** 2 + 2 * np.log(sp), axis=1)
            mc = float(np.mean(log_q - log_p))
            worst = max(worst, abs(exact - mc) / abs(mc))
            closed = np.sum(np.log(sp / sq) + (sq**2 + (mq - mp) ** 2) / (2 * sp**2) - 0.5)
            worst_cf = max(worst_cf, abs(exact - closed))
            min_kl = min(min_kl, exact)
        ok = worst < 0.01 and min_kl >= 0 and worst_cf < 1e-12
        return ok, f"max rel diff {worst:.2%}, closed-form dev {worst_cf:.1e}, min KL {min_kl:.3f}"

    _run(3, "KL matches 1e5-sample Monte Carlo", report, check)


def test_criterion_04_learning_signal(report, corpus20):
    def check():
        t0 = time.perf_counter()
        ds, _ = corpus20
        rule = evaluate_rmse(build_model(ModelSpec(arch="rule_based")), ds[("D", "test")]).rmse
        mlp = train(ModelSpec(arch="mlp"), ds[("D", "train")], ds[("D", "val")],
                    TrainConfig(batch_size=64, lr=1e-3, max_epochs=200, patience=20))
        mlp_rmse = evaluate_rmse(mlp.model, ds[("D", "test")]).rmse
        grnn = train(ModelSpec(arch="grnn"), ds[("Dstar", "train")], ds[("Dstar", "val")],
                     TrainConfig(batch_size=32, lr=1e-3, max_epochs=8, patience=20))
        grnn_rmse = evaluate_rmse(grnn.model, ds[("Dstar", "test")]).rmse
        secs = time.perf_counter() - t0
        ok = grnn_rmse < mlp_rmse < rule and grnn_rmse <= 0.6 * rule and secs < 900
        return ok, (f"GRNN {grnn_rmse:.3f} < MLP {mlp_rmse:.3f} < rule {rule:.3f} m/s; "
                    f"GRNN/rule {grnn_rmse / rule:.2f}; {secs:.0f}s")

    _run(4, "trained GRNN < MLP < rule-based, GRNN <= 0.6 x rule", report, check)


def test_criterion_05_rmse_oracle(report):
    def check():
        rng = np.random.default_rng(5)
        frames = [make_frame(rng, i, attack_dir=1 if i % 3 else -1) for i in range(100)]
        worst = 0.0
        for arch in ("rule_based", "gnn"):
            model = build_model(ModelSpec(arch=arch))
            got = evaluate_rmse(model, frames).rmse
            total = 0.0
            for f in frames:
                pred = model_forward(model, f)["v"]
                sq = 0.0
                for j in range(22):
                    sq += (pred[j][0] - f.player_v[j][0]) ** 2 + (pred[j][1] - f.player_v[j][1]) ** 2
                total += math.sqrt(sq / 22)
            worst = max(worst, abs(got - total / 100))
        return worst <= 1e-9, f"max |difference| {worst:.1e} (rule_based and gnn, 100 events)"

    _run(5, "evaluate_rmse equals brute-force recomputation", report, check)


def _random_snapshot(rng):
    x = rng.uniform([-52.5, -34], [52.5, 34], size=(22, 2))
    v = rng.normal(0, 2.5, size=(22, 2))
    return pc.GameStateSnapshot(rng.uniform([-50, -32], [50, 32]), x, v, np.arange(22) < 11,
                                np.isin(np.arange(22), [0, 11]), int(rng.choice([-1, 1])))


def _mirror_duel(rng):
    """Attackers anywhere; defenders are their reflection across the vertical line through r."""
    r = rng.uniform([-40, -25], [40, 25])
    xa = rng.uniform([-52.5, -34], [52.5, 34], size=(11, 2))
    va = rng.normal(0, 2.5, size=(11, 2))
    xd = np.column_stack([2 * r[0] - xa[:, 0], xa[:, 1]])
    vd = np.column_stack([-va[:, 0], va[:, 1]])
    ball = np.array([r[0], rng.uniform(-34, 34)])
    state = pc.GameStateSnapshot(ball, np.vstack([xa, xd]), np.vstack([va, vd]), np.arange(22) < 11,
                                 np.zeros(22, bool))
    return state, r


def test_criterion_06_ppcf_invariants(report):
    def check():
        rng = np.random.default_rng(6)
        fine = pc.PPCFParams(int_dt=0.02)
        bound = mono = swap = True
        worst_dt = worst_duel = 0.0
        for _ in range(200):
            state = _random_snapshot(rng)
            cells = rng.uniform([-52.5, -34], [52.5, 34], size=(50, 2))
            res = pc.ppcf_cells(state, cells, return_history=True)
            tot = res.att + res.defn
            bound &= bool(np.all(res.att >= 0) and np.all(res.defn >= 0) and np.all(tot <= 1.0))
            mono &= bool(np.all(np.diff(res.history, axis=0) >= 0))
            sw = pc.ppcf_cells(state.swap_teams(), cells)
            swap &= bool(np.array_equal(sw.att, res.defn) and np.array_equal(sw.defn, res.att))
            half = pc.ppcf_cells(state, cells, fine)
            worst_dt = max(worst_dt, float(np.max(np.abs(half.att - res.att))), float(np.max(np.abs(half.defn - res.defn))))
            duel, r = _mirror_duel(rng)
            out = pc.ppcf_cell(duel, r, pc.PPCFParams(converge_tol=1e-7))
            worst_duel = max(worst_duel, abs(out["att"] - 0.5), abs(out["def"] - 0.5))
        ok = bound and mono and swap and worst_duel <= 1e-6 and worst_dt < 0.01
        return ok, (f"bounds {bound}, monotone {mono}, swap exact {swap}, duel dev {worst_duel:.1e}, "
                    f"dt-halving max change {worst_dt:.4f}")

    _run(6, "PPCF invariants on 200 snapshots x 50 cells", report, check)


def test_criterion_07_transition_obso(report):
    def check():
        rng = np.random.default_rng(7)
        worst_sum = worst_elem = 0.0
        in_range = True
        xs, ys = pc.PitchSpec().cell_centers()
        for _ in range(20):
            state = _random_snapshot(rng)
            res = pc.obso_grid(state)
            worst_sum = max(worst_sum, abs(res.transition.total() - 1.0))
            in_range &= 0.0 <= res.total <= 1.0
            goal = (state.attack_sign * 52.5, 0.0)
            d2 = [[(x - state.ball[0]) ** 2 + (y - state.ball[1]) ** 2 for x in xs] for y in ys]
            w = [[math.exp(-0.5 * v / 14.0**2) for v in row] for row in d2]
            z = sum(map(sum, w))
            for iy, y in enumerate(ys):
                for ix, x in enumerate(xs):
                    brute = math.exp(-0.14 * math.dist((x, y), goal)) * res.ppcf.values[iy, ix] * w[iy][ix] / z
                    worst_elem = max(worst_elem, abs(brute - res.grid.values[iy, ix]) / max(abs(brute), 1e-300))
        ok = worst_sum <= 1e-12 and in_range and worst_elem < 1e-9
        return ok, f"|sum T - 1| {worst_sum:.1e}, OBSO sums in [0,1] {in_range}, elementwise rel dev {worst_elem:.1e}"

    _run(7, "transition normalization and OBSO product", report, check)


def test_criterion_08_comparison_harness(report, corpus20):
    def check():
        ds, _ = corpus20
        frames = ds[("D", "test")].samples[:40]
        from velcomp.models import rule_based_velocity

        rule = [rule_based_velocity(f) for f in frames]
        truth = pc.compare_completions(frames, [f.player_v for f in frames], rule)
        same = pc.compare_completions(frames, [r.copy() for r in rule], rule)
        n = len(frames)
        ok = True
        for key in ("ppcf", "obso"):
            w = truth.wins[key]
            ok &= w["rule"] == 0 and w["model"] == n - w["ties"]
            ok &= truth.summary[f"er_{key}_model"]["mean"] == 0.0
            ok &= same.wins[key] == {"model": 0, "rule": 0, "ties": n}
            for rep in (truth, same):
                ok &= sum(rep.wins[key].values()) == n
        return ok, f"{n} events; truth wins {truth.wins}; rule-vs-rule {same.wins['ppcf']}"

    _run(8, "comparison harness accounting", report, check)


def test_criterion_09_determinism(report, tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("seed: 0\nsynth: {n_matches: 4, match_seconds: 300}\nsplit: [2, 1, 1]\n"
                   "ingest: {k: 4}\ntrain: {max_epochs: 5, batch_size: 16, lr: 0.001}\n")

    def pipeline(root):
        steps = [
            ["synth", "--config", cfg, "--out", root / "raw"],
            ["ingest", "--config", cfg, "--input", root / "raw", "--out", root / "data"],
            ["train", "--config", cfg, "--arch", "grnn", "--data", root / "data", "--out", root / "run"],
            ["eval", "--config", cfg, "--arch", "grnn", "--checkpoint", root / "run" / "checkpoint.npz",
             "--data", root / "data", "--out", root / "ev"],
        ]
        for argv in steps:
            assert main([str(a) for a in argv]) == 0
        rmse = json.loads((root / "ev" / "eval_report.json").read_text())["rmse"]
        manifests = {d: (root / d / "manifest.json").read_bytes() for d in ("raw", "data", "run", "ev")}
        return rmse, manifests

    def check():
        a, ma = pipeline(tmp_path / "a")
        b, mb = pipeline(tmp_path / "b")
        return a == b and ma == mb, f"RMSE {a:.6f} vs {b:.6f}; manifests identical {ma == mb}"

    _run(9, "synth -> ingest -> train 5 epochs -> eval is reproducible", report, check)


def test_criterion_10_dataset_shapes(report, corpus20):
    def check():
        corpora = [corpus20[0]]
        for seed in (1, 2, 3):
            ms = generate_corpus(SynthConfig(n_matches=3, match_seconds=400.0, seed=seed))
            corpora.append(ingest_matches(((m.match_id, m.tracking, m.events) for m in ms),
                                          split_spec=SplitSpec(1, 1, 1))[0])
        ok = True
        for ds in corpora:
            for split in ("train", "val", "test"):
                ok &= len(ds[("Dstar", split)]) <= len(ds[("D", split)])
            a = [Dataset.target_key(f) for f in ds[("D", "test")].targets()]
            b = [Dataset.target_key(f) for f in ds[("Dstar", "test")].targets()]
            ok &= a == b and len(set(a)) == len(a)
        counts = {f"{k}_{s}": len(v) for (k, s), v in sorted(corpora[0].items())}
        return ok, f"{len(corpora)} corpora; 20-match counts {counts}"

    _run(10, "|D*| <= |D| and aligned test targets", report, check)
