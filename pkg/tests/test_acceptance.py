"""Acceptance criteria, each at its stated tolerance and time budget.

Every test records one PASS/FAIL line (see ``verdict`` in conftest), listed
again in the terminal summary.
"""

import dataclasses
import hashlib
import math
import time

import numpy as np
import pytest

from stockode.checkpoint import from_bytes, to_bytes
from stockode.cli import EXIT_OK, main
from stockode.evalkit import DailyEvaluation, mrr, ndcg_at_k, random_ranking_sr, trajectory_rows
from stockode.hhcn import build_hypergraph, build_meta, fuse, hyperconv, hypergraph_from_members, metaconv
from stockode.market import prepare_dataset, synth_market
from stockode.model import ModelConfig, StockODE
from stockode.nrode import kl_to_standard_normal, ode_solve
from stockode.numerics import Rng
from stockode.training import evaluate, gradient_check, split_metrics, train

SYNTH_MARKET = dict(n_stocks=16, n_days=400, n_hyperedges=6, signal_strength=1.0, seed=7)
LEARN_CFG = ModelConfig(d=32, epochs=20, seed=0)


# -- independent oracles -----------------------------------------------------------
def brute_reciprocal_rank(r_hat, r_true):
    n = len(r_hat)
    top = min(range(n), key=lambda i: (-r_hat[i], i))
    true_sorted = sorted(range(n), key=lambda i: (-r_true[i], i))
    return 1.0 / (true_sorted.index(top) + 1)


def brute_ndcg(r_hat, r_true, k):
    lo = min(r_true)
    rel = [x - lo for x in r_true]
    pred = sorted(range(len(r_hat)), key=lambda i: (-r_hat[i], i))[:k]
    ideal = sorted(range(len(r_true)), key=lambda i: (-r_true[i], i))[:k]
    dcg = sum(rel[s] / math.log2(p + 2) for p, s in enumerate(pred))
    idcg = sum(rel[s] / math.log2(p + 2) for p, s in enumerate(ideal))
    return dcg / idcg


def incidence(members, n):
    M = np.zeros((n, len(members)))
    for j, m in enumerate(members):
        M[sorted(m), j] = 1.0
    return M


def dense_hyperconv(U, members, n, W):
    M = incidence(members, n)
    Dv = M.sum(axis=1)
    D_inv = np.diag([1 / x if x else 0.0 for x in Dv])
    return D_inv @ M @ np.diag(1 / M.sum(axis=0)) @ M.T @ U @ W


def dense_metaconv(B, members, W):
    e = len(members)
    om = np.eye(e)
    for a in range(e):
        for b in range(e):
            if a != b:
                om[a, b] = len(members[a] & members[b]) / len(members[a] | members[b])
    return np.diag(1 / om.sum(axis=1)) @ om @ B @ W


@pytest.fixture(scope="module")
def synthetic():
    m = synth_market(**SYNTH_MARKET)
    ds = prepare_dataset(m.bars, m.universe.tickers, LEARN_CFG.w, (0.6, 0.2, 0.2))
    return m, ds, build_hypergraph(m.relations, m.universe)


@pytest.fixture(scope="module")
def trained(synthetic):
    """variant -> (TrainResult, seconds)."""
    _, ds, g = synthetic
    runs = {}

    def get(variant):
        if variant not in runs:
            t0 = time.perf_counter()
            res = train(ds, g, dataclasses.replace(LEARN_CFG, variant=variant))
            runs[variant] = (res, time.perf_counter() - t0)
        return runs[variant]

    return get


# -- criteria ----------------------------------------------------------------------
def test_gradient_fidelity(verdict):
    m = synth_market(4, 80, 2, 1.0, 0)
    ds = prepare_dataset(m.bars, m.universe.tickers, 5, (0.6, 0.2, 0.2))
    model = StockODE(ModelConfig(d=8, w=5, beta=0.1, seed=0), build_hypergraph(m.relations, m.universe))
    t0 = time.perf_counter()
    rep = gradient_check(model, ds.train[0])
    secs = time.perf_counter() - t0
    verdict("gradient fidelity", rep.max_error < 1e-5 and secs < 60,
            f"max rel error {rep.max_error:.2e} ({rep.worst_param}) over {rep.n_checked} entries, {secs:.1f}s")


def test_euler_order(verdict):
    t0 = time.perf_counter()
    errs = [abs(ode_solve(lambda h, t: -h, np.array([1.0]), 0.0, 1.0, k).data[0] - math.exp(-1))
            for k in (10, 20, 40)]
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    secs = time.perf_counter() - t0
    verdict("Euler order", all(1.8 <= r <= 2.2 for r in ratios) and secs < 1,
            f"errors {errs[0]:.3e} {errs[1]:.3e} {errs[2]:.3e}, ratios {ratios[0]:.4f} {ratios[1]:.4f}, {secs:.3f}s")


def test_kl_correctness(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    mu, sigma = rng.normal(size=1000) * 2, rng.uniform(0.05, 3.0, size=1000)
    closed = 0.5 * (sigma ** 2 + mu ** 2 - 1 - np.log(sigma ** 2))
    analytic = np.array([kl_to_standard_normal(a, b).item() for a, b in zip(mu, sigma)])
    closed_err = float(np.max(np.abs(analytic - closed)))
    worst_z = 0.0
    for i in range(10):
        z = mu[i] + sigma[i] * rng.standard_normal(1_000_000)
        log_ratio = -0.5 * ((z - mu[i]) / sigma[i]) ** 2 - np.log(sigma[i]) + 0.5 * z ** 2
        se = log_ratio.std(ddof=1) / math.sqrt(z.size)
        worst_z = max(worst_z, abs(log_ratio.mean() - analytic[i]) / se)
    secs = time.perf_counter() - t0
    verdict("KL correctness", closed_err < 1e-10 and worst_z < 3 and secs < 30,
            f"closed-form max error {closed_err:.1e}, worst Monte-Carlo deviation {worst_z:.2f} SE, {secs:.1f}s")


def test_metric_oracles(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    evals = [DailyEvaluation(t, rng.normal(size=20), rng.normal(size=20)) for t in range(1000)]
    d_mrr = abs(mrr(evals) - np.mean([brute_reciprocal_rank(e.r_hat, e.r_true) for e in evals]))
    d_ndcg = abs(ndcg_at_k(evals, 5) - np.mean([brute_ndcg(e.r_hat, e.r_true, 5) for e in evals]))
    secs = time.perf_counter() - t0
    verdict("metric oracles", d_mrr <= 1e-12 and d_ndcg <= 1e-12 and secs < 10,
            f"|dMRR| {d_mrr:.1e}, |dNDCG@5| {d_ndcg:.1e} over 1000 days, {secs:.1f}s")


def test_hypergraph_algebra(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(100):
        n, e = int(rng.integers(2, 13)), int(rng.integers(1, 7))
        members = [frozenset(rng.choice(n, size=int(rng.integers(2, n + 1)), replace=False).tolist())
                   for _ in range(e)]
        g = hypergraph_from_members(members, n)
        U, W = rng.normal(size=(n, 5)), rng.normal(size=(5, 5))
        B, W_B, W_F = rng.normal(size=(e, 5)), rng.normal(size=(5, 5)), rng.normal(size=(e, 4))
        worst = max(worst,
                    np.abs(hyperconv(U, g, W).data - dense_hyperconv(U, members, n, W)).max(),
                    np.abs(metaconv(B, build_meta(g), W_B).data - dense_metaconv(B, members, W_B)).max(),
                    np.abs(fuse(U, B, W_F).data - U @ B.T @ W_F).max())
    secs = time.perf_counter() - t0
    verdict("hypergraph algebra", worst < 1e-10 and secs < 10,
            f"max deviation {worst:.1e} over 100 instances, {secs:.1f}s")


def test_equivariance(verdict):
    t0 = time.perf_counter()
    m = synth_market(6, 80, 3, 1.0, 4)
    ds = prepare_dataset(m.bars, m.universe.tickers, 5, (0.6, 0.2, 0.2))
    g = build_hypergraph(m.relations, m.universe)
    cfg = ModelConfig(d=8, d_prime=4, seed=0)
    model = StockODE(cfg, g)
    rng = np.random.default_rng(3)
    worst = 0.0
    for trial in range(20):
        window = ds.train[trial]
        perm = rng.permutation(6)
        panel = dataclasses.replace(window.panel, values=window.panel.values[:, perm],
                                    returns=window.panel.returns[:, perm])
        moved = dataclasses.replace(window, panel=panel, target=window.target[perm])
        permuted = StockODE(cfg, g.permuted(perm))
        permuted.load_state_dict(model.state_dict())
        base = model.forward(window).prediction.r_hat
        worst = max(worst, np.abs(permuted.forward(moved).prediction.r_hat - base[perm]).max())
    secs = time.perf_counter() - t0
    verdict("equivariance", worst < 1e-8 and secs < 30, f"max deviation {worst:.1e} over 20 trials, {secs:.1f}s")


def test_learnability(verdict, synthetic, trained):
    _, ds, _ = synthetic
    res, secs = trained("full")
    _, evals = evaluate(res.model, ds.test, with_loss=False)
    sr, test_mrr, test_ndcg = split_metrics(evals)
    baseline = random_ranking_sr(evals, 5, 1000, Rng(11))
    p95 = float(np.percentile(baseline, 95))
    ok = test_mrr >= 0.5 and test_ndcg >= 0.85 and sr > p95 and LEARN_CFG.epochs <= 200 and secs < 600
    verdict("learnability", ok,
            f"test MRR {test_mrr:.4f}, NDCG@5 {test_ndcg:.4f}, top-5 SR {sr:.4f} vs random p95 {p95:.4f}, "
            f"best epoch {res.best_epoch}/{LEARN_CFG.epochs}, {secs:.0f}s")


def test_ablation_ordering(verdict, synthetic, trained):
    _, ds, _ = synthetic
    val = {}
    for variant in ("full", "A", "I"):
        val[variant], _ = evaluate(trained(variant)[0].model, ds.val)
    ok = all(val["full"] <= val[v] * 1.01 for v in ("A", "I"))
    verdict("ablation ordering", ok,
            "validation loss " + ", ".join(f"{v} {val[v]:.5f}" for v in ("full", "A", "I")))


def test_determinism(verdict, tmp_path):
    assert main(["-q", "synth", "--out", str(tmp_path / "data"), "--stocks", "6", "--days", "80",
                 "--hyperedges", "2", "--seed", "5"]) == EXIT_OK
    cfg = tmp_path / "run.cfg"
    cfg.write_text("universe = data/universe.txt\nbars = data/bars.csv\nrelations = data/relations.txt\n"
                   "d = 8\nd_prime = 4\nepochs = 3\nseed = 2\n", encoding="utf-8")
    digests = []
    for run in ("a", "b"):
        out = tmp_path / run
        assert main(["-q", "train", str(cfg), "--out", str(out)]) == EXIT_OK
        assert main(["-q", "eval", str(cfg), "--checkpoint", str(out / "checkpoint.bin"),
                     "--report", str(out / "report.json")]) == EXIT_OK
        digests.append({p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(out.iterdir())})
    raw = (tmp_path / "a" / "checkpoint.bin").read_bytes()
    round_trip = to_bytes(from_bytes(raw)) == raw
    verdict("determinism", digests[0] == digests[1] and round_trip,
            f"identical artifacts {sorted(digests[0])}: {digests[0] == digests[1]}, "
            f"checkpoint round-trip bitwise: {round_trip}")


def test_continuity_export(verdict, synthetic):
    _, ds, g = synthetic
    model = StockODE(ModelConfig(d=16, seed=0), g)
    fractions = [i / 10 for i in range(1, 11)]
    worst, n_rows = 0.0, 0
    for window in ds.test[:5]:
        rows = trajectory_rows(model, window, fractions)
        n_rows += len(rows)
        last = sorted((s, dec) for (_, day, q, s, _, dec) in rows if day == model.cfg.w - 1 and q == 1.0)
        decoded = np.array([dec for _, dec in last])
        worst = max(worst, np.abs(decoded - model.predict(window).r_hat).max())
    expect_rows = 5 * model.cfg.w * 10 * 16
    verdict("continuity export", worst <= 1e-10 and n_rows == expect_rows,
            f"fraction-1.0 decode vs prediction max deviation {worst:.1e}, {n_rows} rows")
