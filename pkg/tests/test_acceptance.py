"""Acceptance criteria, one test per criterion.

Each test prints a ``criterion N [PASS|FAIL]`` line (collected again in the
terminal summary) and then asserts the criterion at its stated tolerance.
Criteria 7, 8 and 9 drive the command-line interface end to end.
"""

import os
import time
from pathlib import Path

import numpy as np
import pytest

from fgot import Graph, kl_project, materialize, project_and_grad, random_permutation
from fgot.cli import main
from fgot.datasets import read_results
from fgot.distance import brute_force_align, exact_distance, surrogate_cost, surrogate_gradient
from fgot.evaluation import pair_seed
from fgot.generators import erdos_renyi
from fgot.solvers import SolverSpec, preset
from fgot.transport import SinkhornConfig

from conftest import random_graph, record

CHECK_FILTERS = ("pinv-sqrt", "sq", "sqrt", "heat:0.2", "heat:0.8", "pinv-sqrt+sq", "pinv-sqrt+heat:0.8",
                 "sq+heat:0.8")


def connected_graph(rng, n, weighted=True):
    """Random weighted graph with a spanning path, so pinv-sqrt has a single zero mode."""
    g = random_graph(rng, n, p=0.4, weighted=weighted)
    W = np.array(g.weights)
    for i in range(n - 1):
        if W[i, i + 1] == 0:
            W[i, i + 1] = W[i + 1, i] = 1.0
    return Graph(W)


def cli_rows(tmp_path, argv, name):
    out = tmp_path / name
    t0 = time.perf_counter()
    code = main(argv + ["-o", str(out)])
    elapsed = time.perf_counter() - t0
    assert code == 0, f"{argv[0]} exited with {code}"
    return read_results(out)[1], elapsed


def test_criterion_01_filter_equivariance():
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst = 0.0
    for case in range(200):
        n = int(rng.integers(3, 21))
        g = random_graph(rng, n, p=0.5, weighted=True)
        P = random_permutation(n, seed=rng)
        filt = CHECK_FILTERS[case % len(CHECK_FILTERS)]
        lhs = materialize(g.permuted(P), filt).gL
        rhs = P.matrix @ materialize(g, filt).gL @ P.matrix.T
        worst = max(worst, float(np.linalg.norm(lhs - rhs)))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-7 and elapsed < 10
    record(1, "filter permutation equivariance", ok, f"max ||g(PLP^T) - P g(L) P^T||_F = {worst:.2e}, {elapsed:.2f}s")
    assert ok


def test_criterion_02_exact_below_surrogate():
    rng = np.random.default_rng(202)
    worst = -np.inf
    for case in range(200):
        n = int(rng.integers(3, 13))
        g1, g2 = random_graph(rng, n, weighted=True), random_graph(rng, n, weighted=True)
        P = random_permutation(n, seed=rng).matrix
        for filt in CHECK_FILTERS:
            f1, f2 = materialize(g1, filt), materialize(g2, filt)
            worst = max(worst, exact_distance(f1, f2, P.T) - surrogate_cost(f1, f2, P))
    ok = worst <= 1e-7
    record(2, "exact distance <= surrogate at permutations", ok, f"max(exact - surrogate) = {worst:.2e}")
    assert ok


def test_criterion_03_isomorphic_zero():
    rng = np.random.default_rng(303)
    worst_exact, worst_sur = 0.0, 0.0
    for case in range(50):
        n = int(rng.integers(3, 8))
        g = random_graph(rng, n, p=0.5, weighted=True)
        g2 = g.permuted(random_permutation(n, seed=rng))
        filt = CHECK_FILTERS[case % len(CHECK_FILTERS)]
        bf = brute_force_align(materialize(g, filt), materialize(g2, filt))
        worst_exact, worst_sur = max(worst_exact, abs(bf.exact)), max(worst_sur, abs(bf.surrogate))
    ok = worst_exact < 1e-7 and worst_sur < 1e-7
    record(3, "isomorphic pairs have zero minimum", ok,
           f"max exact min = {worst_exact:.2e}, max surrogate min = {worst_sur:.2e}")
    assert ok


def _rel_err(analytic, numeric):
    mask = np.abs(numeric) > 1e-6
    if not mask.any():
        return 0.0
    return float(np.max(np.abs(analytic[mask] - numeric[mask]) / np.abs(numeric[mask])))


def test_criterion_04_gradients():
    rng = np.random.default_rng(404)
    h = 1e-6
    worst_sur, worst_proj = 0.0, 0.0
    for _ in range(20):
        f1 = materialize(connected_graph(rng, 5), "heat:0.8")
        f2 = materialize(connected_graph(rng, 5), "pinv-sqrt")
        P = rng.random((5, 5)) / 25 + 1e-3
        G = surrogate_gradient(f1, f2, P)
        num = np.zeros_like(P)
        for idx in np.ndindex(P.shape):
            E = np.zeros_like(P)
            E[idx] = h
            num[idx] = (surrogate_cost(f1, f2, P + E) - surrogate_cost(f1, f2, P - E)) / (2 * h)
        worst_sur = max(worst_sur, _rel_err(G, num))

        # cost of the projected matrix, differentiated through a fixed number of sweeps
        cfg = SinkhornConfig(max_iters=30, tol=0.0)
        Q = rng.random((5, 5)) + 0.1
        W = rng.standard_normal((5, 5))

        def f(X):
            C = kl_project(X, cfg).matrix
            return float(np.sum(W * C) + surrogate_cost(f1, f2, C))

        C = kl_project(Q, cfg).matrix
        _, dQ = project_and_grad(Q, W + surrogate_gradient(f1, f2, C), cfg)
        numq = np.zeros_like(Q)
        for idx in np.ndindex(Q.shape):
            E = np.zeros_like(Q)
            E[idx] = h
            numq[idx] = (f(Q + E) - f(Q - E)) / (2 * h)
        worst_proj = max(worst_proj, _rel_err(dQ, numq))
    ok = worst_sur < 1e-4 and worst_proj < 1e-4
    record(4, "analytic gradients match finite differences", ok,
           f"max rel err surrogate_gradient {worst_sur:.2e}, project_and_grad {worst_proj:.2e}")
    assert ok


def test_criterion_05_projection_feasibility():
    rng = np.random.default_rng(505)
    worst_marg, worst_idem = 0.0, 0.0
    for case in range(100):
        n = int(rng.integers(2, 16))
        m = n if case % 2 == 0 else int(rng.integers(2, 16))
        P = rng.random((n, m)) + 1e-3
        C = kl_project(P)
        worst_marg = max(worst_marg, C.marginal_violation())
        worst_idem = max(worst_idem, float(np.max(np.abs(kl_project(C.matrix).matrix - C.matrix))))
    ok = worst_marg < 1e-6 and worst_idem < 1e-8
    record(5, "KL projection feasibility and idempotence", ok,
           f"max marginal violation {worst_marg:.2e}, max idempotence gap {worst_idem:.2e}")
    assert ok


# constants for the small exact-recovery check; c1 was picked on isomorphic
# pairs drawn with a different master seed from the ones evaluated here
SMALL_MGD = SolverSpec("mgd", c1=1.0)
SMALL_SMGD = preset("er-align", "smgd")


def test_criterion_06_small_instance_optimality():
    filt = "pinv-sqrt"
    hits = {"mgd": 0, "smgd": 0, "mgd (er-align preset)": 0}
    specs = {"mgd": SMALL_MGD, "smgd": SMALL_SMGD, "mgd (er-align preset)": preset("er-align", "mgd", "pinv_sqrt")}
    for s in range(50):
        g1 = erdos_renyi(6, 0.4, seed=pair_seed(6, s, 0))
        g2 = g1.permuted(random_permutation(6, seed=pair_seed(6, s, 1)))
        f1, f2 = materialize(g1, filt), materialize(g2, filt)
        assert abs(brute_force_align(f1, f2).exact) < 1e-7
        for name, spec in specs.items():
            res = spec.solve(f1, f2, seed=s)
            hits[name] += exact_distance(f1, f2, res.hard.matrix.T) <= 1e-6
    rate = {k: v / 50 for k, v in hits.items()}
    ok_s, ok_m = rate["smgd"] >= 0.8, rate["mgd"] >= 0.6
    record(6, "smgd exact recovery >= 80% (n=6, pinv-sqrt)", ok_s, f"{rate['smgd']:.0%} ({SMALL_SMGD.describe()})")
    record(6, "mgd exact recovery >= 60% (n=6, pinv-sqrt)", ok_m,
           f"{rate['mgd']:.0%} ({SMALL_MGD.describe()}); er-align preset {rate['mgd (er-align preset)']:.0%}")
    assert ok_s and ok_m


@pytest.mark.slow
def test_criterion_07_square_beats_pinv_sqrt(tmp_path):
    rows, elapsed = cli_rows(tmp_path, ["benchmark-alignment", "--seed", "0"], "bench.csv")
    assert len(rows) == 3 * 20 * 4
    ok = elapsed < 600
    parts = []
    for size in (10, 20, 30):
        def mean(method, filt):
            return np.mean([r["frobenius"] for r in rows
                            if r["size"] == size and r["method"] == method and r["filter"] == filt])

        sq = max(mean("mgd", "sq"), mean("smgd", "sq"))
        pinv = min(mean("mgd", "pinv-sqrt"), mean("smgd", "pinv-sqrt"))
        ok &= sq < pinv
        parts.append(f"n={size}: worst sq {sq:.2f} < best pinv-sqrt {pinv:.2f}")
    record(7, "sq solvers align ER graphs better than pinv-sqrt", ok, "; ".join(parts) + f"; {elapsed:.0f}s")
    assert ok


@pytest.mark.slow
def test_criterion_08_fused_sbm_trends(tmp_path):
    rows, elapsed = cli_rows(tmp_path, ["community", "--experiment", "fused", "--seed", "0"], "community.csv")
    fractions = (0.0, 0.1, 0.2, 0.3)

    def nmis(frac, method, filt):
        return np.array([r["nmi"] for r in rows
                         if r["fraction_fused"] == frac and r["method"] == method and r["filter"] == filt])

    med0 = float(np.median(nmis(0.0, "smgd", "heat:0.8")))
    ok_a = med0 >= 0.95
    record("8a", "smgd heat:0.8 median NMI >= 0.95 at fraction 0", ok_a, f"median {med0:.3f}")

    ok_b, parts = True, []
    for filt in ("heat:0.2", "heat:0.8"):
        for frac in fractions:
            s, m = nmis(frac, "smgd", filt).mean(), nmis(frac, "mgd", filt).mean()
            ok_b &= s >= m
            parts.append(f"{filt}@{frac:g}: {s:.3f} vs {m:.3f}")
    record("8b", "smgd mean NMI >= mgd mean NMI (heat filters)", ok_b, "; ".join(parts))

    ok_c, parts = True, []
    for filt in ("pinv-sqrt", "heat:0.2", "heat:0.8"):
        means = [nmis(f, "smgd", filt).mean() for f in fractions]
        ses = [nmis(f, "smgd", filt).std(ddof=1) / np.sqrt(20) for f in fractions]
        mono = all(means[i + 1] <= means[i] + ses[i] for i in range(len(fractions) - 1))
        ok_c &= mono
        parts.append(f"{filt}: " + " ".join(f"{v:.3f}" for v in means))
    record("8c", "smgd NMI non-increasing in fused fraction (1 s.e.)", ok_c, "; ".join(parts) + f"; {elapsed:.0f}s")
    assert ok_a and ok_b and ok_c


@pytest.mark.slow
def test_criterion_09_synthetic_classification(tmp_path):
    rows, elapsed = cli_rows(tmp_path, ["classify", "--dataset", "synthetic", "--filters", "heat:0.8", "--seed", "0"],
                             "classify.csv")
    acc = rows[0]["accuracy_mean"]
    ok = acc > 0.8 and elapsed < 900
    record(9, "ER vs SBM leave-one-out 1-NN accuracy > 0.8", ok,
           f"accuracy {acc:.3f} (c1={rows[0]['c1']}), {elapsed:.0f}s")
    assert ok


def _mutag_dir():
    for cand in (os.environ.get("FGOT_MUTAG_DIR"), "data/MUTAG", str(Path.home() / "data" / "MUTAG")):
        if cand and (Path(cand) / "MUTAG_A.txt").is_file():
            return cand
    return None


@pytest.mark.slow
def test_criterion_09_mutag_optional(tmp_path):
    d = _mutag_dir()
    if d is None:
        record(9, "MUTAG end-to-end (optional)", True, "skipped: MUTAG not available locally (set FGOT_MUTAG_DIR)")
        pytest.skip("MUTAG not available locally")
    rows, elapsed = cli_rows(tmp_path, ["classify", "--dataset", d, "--name", "MUTAG", "--filters", "heat:0.8",
                                        "--sample-size", "60", "--reps", "3", "--seed", "0"], "mutag.csv")
    acc, std = rows[0]["accuracy_mean"], rows[0]["accuracy_std"]
    ok = 0.6 <= acc <= 1.0
    record(9, "MUTAG accuracy in sanity band [0.6, 1.0]", ok, f"{acc:.3f} +- {std:.3f}, {elapsed:.0f}s")
    assert ok


DETERMINISM_RUNS = {
    "align": ["align", "--g1", "er:7", "--g2", "perm", "--filter", "sq", "--oracle"],
    "benchmark-alignment": ["benchmark-alignment", "--sizes", "8,10", "--reps", "3"],
    "community": ["community", "--fractions", "0,0.2", "--reps", "3", "--filters", "heat:0.8"],
    "classify": ["classify", "--per-class", "6", "--n", "10"],
    "demo-ordering": ["demo-ordering"],
}


def test_criterion_10_cli_determinism(tmp_path):
    bad = []
    for cmd, argv in DETERMINISM_RUNS.items():
        outs = []
        for run in range(2):
            out = tmp_path / f"{cmd}-{run}.csv"
            assert main(argv + ["--seed", "11", "--jobs", "1", "-o", str(out)]) == 0
            outs.append(out.read_bytes())
        if outs[0] != outs[1]:
            bad.append(cmd)
    ok = not bad
    record(10, "CLI reruns are byte-identical", ok, "all commands identical" if ok else f"differs: {bad}")
    assert ok
