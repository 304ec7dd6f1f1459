"""Command-line entry point: ``fgot <command> [options]``.

Every command takes ``--seed``; all randomness is derived from it through
:func:`fgot.evaluation.derive_seed`, so output does not depend on ``--jobs``.
Results go to ``--output`` (default stdout) as CSV or JSON lines. Wall-clock
columns are only written with ``--with-timing`` because they differ between
runs.

Exit codes: 0 success, 2 usage or input error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path
from typing import Callable, List, Optional, Sequence

import numpy as np

from . import __version__
from .datasets import GraphCollection, load_edge_list, load_tudataset, sample_collection, write_results
from .distance import brute_force_align, BRUTE_FORCE_MAX_N, exact_distance
from .errors import NumericError, ValidationError
from .evaluation import (
    aligned_frobenius,
    community_nmi,
    derive_seed,
    distance_matrix,
    line_search_c1,
    one_nn_classify,
    _run_tasks,
)
from .filters import STANDARD_FILTERS, materialize, parse_filter
from .generators import DEFAULT_ER_P, DEFAULT_P_IN, DEFAULT_P_OUT, SbmSpec, erdos_renyi, fuse_nodes, sbm
from .graph import Graph, random_permutation
from .solvers import LINESEARCH_GRID, METHODS, PRESETS, SolverSpec, preset

log = logging.getLogger("fgot")

EXIT_USAGE = 2
EXIT_NUMERIC = 3
DEMO_FILTERS = ("heat:5", "pinv-sqrt", "heat:0.5", "sqrt", "sq")


class UsageError(ValidationError):
    pass


def _csv_list(conv: Callable = str):
    def parse(text: str):
        try:
            return [conv(t.strip()) for t in text.split(",") if t.strip()]
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None
    return parse


def default_jobs() -> int:
    env = os.environ.get("FGOT_JOBS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"FGOT_JOBS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


# graph arguments ------------------------------------------------------------

def parse_graph_arg(text: str, seed: int, reference: Optional[Graph] = None) -> Graph:
    """A file path, or a generator spec.

    Specs: ``er:N[:P]``, ``sbm:N:K[:P_IN:P_OUT]``, ``ring:N``, and for the
    second graph ``perm`` (a random relabeling of the first graph).
    """
    if text == "perm":
        if reference is None:
            raise UsageError("'perm' is only valid for the second graph")
        return reference.permuted(random_permutation(reference.n, seed))
    head, _, rest = text.partition(":")
    if rest and head in ("er", "sbm", "ring"):
        parts = rest.split(":")
        try:
            if head == "er":
                n = int(parts[0])
                p = float(parts[1]) if len(parts) > 1 else DEFAULT_ER_P
                return erdos_renyi(n, p, seed)
            if head == "sbm":
                n, k = int(parts[0]), int(parts[1])
                p_in = float(parts[2]) if len(parts) > 2 else DEFAULT_P_IN
                p_out = float(parts[3]) if len(parts) > 3 else DEFAULT_P_OUT
                return sbm(SbmSpec(n, k, p_in, p_out), seed)[0]
            from .generators import ring_with_chords

            return ring_with_chords(int(parts[0]))
        except (ValueError, IndexError) as exc:
            raise UsageError(f"bad graph spec {text!r}: {exc}") from None
    if not Path(text).is_file():
        raise UsageError(f"graph file not found: {text}")
    return load_edge_list(text)


def solver_from_args(args, method: str, filter_text: str, preset_name: Optional[str] = None) -> SolverSpec:
    name = preset_name or args.preset
    spec = preset(name, method, parse_filter(filter_text).kind)
    over = {}
    for key in ("c1", "c2", "epsilon", "alpha", "max_iters", "samples"):
        val = getattr(args, key, None)
        if val is not None:
            over[key] = val
    if getattr(args, "parametrization", None):
        over["parametrization"] = args.parametrization
    if over:
        from dataclasses import replace

        spec = replace(spec, **over)
    return spec


def _mapping_text(mapping) -> str:
    return " ".join(str(int(v)) for v in mapping)


def _clean(x: float) -> float:
    # exact distances can come out as tiny negatives (or -0.0) from rounding
    return max(float(x), 0.0)


def _metadata(args, **extra) -> dict:
    meta = {"command": args.command, "version": __version__, "seed": args.seed}
    meta.update(extra)
    return meta


# align -----------------------------------------------------------------------

def run_align(args) -> tuple:
    s = args.seed
    g1 = parse_graph_arg(args.g1, derive_seed(s, "g1"))
    g2 = parse_graph_arg(args.g2, derive_seed(s, "g2"), reference=g1)
    spec = solver_from_args(args, args.solver, args.filter)
    f1, f2 = materialize(g1, args.filter), materialize(g2, args.filter)
    t0 = time.perf_counter()
    res = spec.solve(f1, f2, derive_seed(s, "solver"))
    wall = time.perf_counter() - t0
    square = g1.n == g2.n
    row = {
        "g1": args.g1,
        "g2": args.g2,
        "n1": g1.n,
        "n2": g2.n,
        "filter": str(parse_filter(args.filter)),
        "solver": spec.describe(),
        "final_cost": res.final_cost,
        "exact_distance": _clean(exact_distance(f1, f2, res.hard.matrix.T)) if square else "",
        "frobenius": aligned_frobenius(g1, g2, res.hard) if square else "",
        "iterations": res.iterations,
        "converged": int(res.converged),
        "assignment": _mapping_text(res.hard.mapping),
    }
    if args.oracle:
        if not square or g1.n > BRUTE_FORCE_MAX_N:
            raise UsageError(f"--oracle needs two graphs of equal size n <= {BRUTE_FORCE_MAX_N}")
        bf = brute_force_align(f1, f2)
        row["oracle_exact"] = _clean(bf.exact)
        row["oracle_gap"] = _clean(row["exact_distance"]) - _clean(bf.exact)
    if args.with_timing:
        row["wall_time"] = wall
    print(f"aligned in {wall:.3f}s, final cost {res.final_cost:.6g}", file=sys.stderr)
    return [row], _metadata(args, filter=row["filter"], solver=row["solver"], preset=args.preset)


# benchmark-alignment -------------------------------------------------------

def _bench_task(t):
    size, method, filt, rep, master, p, spec, timing = t
    g1 = erdos_renyi(size, p, derive_seed(master, "bench", size, rep, 1))
    g2 = erdos_renyi(size, p, derive_seed(master, "bench", size, rep, 2))
    f1, f2 = materialize(g1, filt), materialize(g2, filt)
    t0 = time.perf_counter()
    res = spec.solve(f1, f2, derive_seed(master, "bench", size, rep, method, filt))
    row = {
        "size": size,
        "method": method,
        "filter": filt,
        "seed": rep,
        "frobenius": aligned_frobenius(g1, g2, res.hard),
        "final_cost": res.final_cost,
    }
    if timing:
        row["wall_time"] = time.perf_counter() - t0
    return row


def parse_methods(items: Sequence[str]) -> list:
    out = []
    for it in items:
        method, _, filt = it.partition(":")
        if method not in METHODS or not filt:
            raise UsageError(f"method must look like 'mgd:<filter>' or 'smgd:<filter>', got {it!r}")
        out.append((method, str(parse_filter(filt))))
    return out


def run_benchmark(args) -> tuple:
    methods = parse_methods(args.methods)
    tasks = []
    for size in args.sizes:
        for method, filt in methods:
            spec = solver_from_args(args, method, filt)
            for rep in range(args.reps):
                tasks.append((size, method, filt, rep, args.seed, args.p, spec, args.with_timing))
    rows = _run_tasks(_bench_task, tasks, args.jobs)
    for size in args.sizes:
        for method, filt in methods:
            v = [r["frobenius"] for r in rows if r["size"] == size and r["method"] == method and r["filter"] == filt]
            print(f"size {size:3d} {method}:{filt:<12s} frobenius {np.mean(v):.4f} +- {np.std(v):.4f}",
                  file=sys.stderr)
    meta = _metadata(args, methods=",".join(f"{m}:{f}" for m, f in methods), preset=args.preset, er_p=args.p)
    return rows, meta


# community -----------------------------------------------------------------

def _community_task(t):
    (experiment, setting, rep, master, n, k, p_in, p_out, filt, method, spec, timing) = t
    g1, _ = sbm(SbmSpec(n, k, p_in, p_out), derive_seed(master, "community", rep, 0))
    if experiment == "fused":
        shuffled = g1.permuted(random_permutation(n, derive_seed(master, "community", rep, 1)))
        g2 = fuse_nodes(shuffled, setting, derive_seed(master, "community", rep, 2, repr(setting)))
    else:
        g2, _ = sbm(SbmSpec(int(setting), k, p_in, p_out), derive_seed(master, "community", rep, 3, int(setting)))
    f1, f2 = materialize(g1, filt), materialize(g2, filt)
    t0 = time.perf_counter()
    res = spec.solve(f1, f2, derive_seed(master, "community", rep, method, filt, repr(setting)))
    wall = time.perf_counter() - t0
    row = {
        ("fraction_fused" if experiment == "fused" else "size2"): setting,
        "method": method,
        "filter": filt,
        "seed": rep,
        "nmi": community_nmi(g1, g2, res.hard, k, derive_seed(master, "nmi", rep, repr(setting))),
        "frobenius": aligned_frobenius(g1, g2, res.hard) if g1.n == g2.n else "",
        "cost": res.final_cost,
    }
    if timing:
        row["wall_time"] = wall
    return row


def run_community(args) -> tuple:
    if args.experiment == "fused":
        settings = [float(f) for f in args.fractions]
    else:
        settings = [int(s) for s in args.sizes]
        if any(s < args.k for s in settings):
            raise UsageError("every size needs at least k vertices")
    filters = [str(parse_filter(f)) for f in args.filters]
    tasks = []
    for setting in settings:
        for filt in filters:
            for method in args.solvers:
                spec = solver_from_args(args, method, filt)
                for rep in range(args.reps):
                    tasks.append((args.experiment, setting, rep, args.seed, args.n, args.k, args.p_in, args.p_out,
                                  filt, method, spec, args.with_timing))
    rows = _run_tasks(_community_task, tasks, args.jobs)
    key = "fraction_fused" if args.experiment == "fused" else "size2"
    for setting in settings:
        for filt in filters:
            for method in args.solvers:
                v = [r["nmi"] for r in rows if r[key] == setting and r["filter"] == filt and r["method"] == method]
                print(f"{key} {setting:<5} {method:4s} {filt:<10s} nmi {np.mean(v):.3f} +- {np.std(v):.3f}",
                      file=sys.stderr)
    meta = _metadata(args, experiment=args.experiment, filters=",".join(filters), solvers=",".join(args.solvers),
                     preset=args.preset, n=args.n, k=args.k, p_in=args.p_in, p_out=args.p_out)
    return rows, meta


# classify ------------------------------------------------------------------

def synthetic_collection(per_class: int, n: int, seed: int) -> GraphCollection:
    """ER(p=0.2) versus 4-community SBM graphs of equal size."""
    er = [erdos_renyi(n, 0.2, derive_seed(seed, "synthetic", "er", i)).with_label("er") for i in range(per_class)]
    sb = [sbm(SbmSpec(n, 4), derive_seed(seed, "synthetic", "sbm", i))[0].with_label("sbm") for i in range(per_class)]
    return GraphCollection(tuple(er + sb), "synthetic-er-vs-sbm", provenance=f"generated n={n} per_class={per_class}")


def expand_filters(items: Sequence[str]) -> List[str]:
    out = []
    for it in items:
        out.extend(STANDARD_FILTERS if it == "all6" else [it])
    return [str(parse_filter(f)) for f in out]


def run_classify(args) -> tuple:
    if args.dataset == "synthetic":
        coll = synthetic_collection(args.per_class, args.n, derive_seed(args.seed, "data"))
    else:
        d = Path(args.dataset)
        if not d.is_dir():
            raise UsageError(f"dataset directory not found: {d}")
        coll = load_tudataset(d, args.name or d.name)
    k = min(args.sample_size or len(coll), len(coll))
    filters = expand_filters(args.filters)
    rows = []
    for filt in filters:
        accs, c1s = [], []
        for rep in range(args.reps):
            sample = sample_collection(coll, k, derive_seed(args.seed, "sample", rep))
            spec = solver_from_args(args, args.solver, filt)
            rep_seed = derive_seed(args.seed, "pairs", rep)
            if args.preset == "classify-linesearch" and args.solver == "mgd" and args.c1 is None:
                ls = line_search_c1(sample.graphs, filt, spec, LINESEARCH_GRID, seed=rep_seed, parallelism=args.jobs)
                spec = spec.with_c1(ls.best)
            c1s.append(spec.c1)
            dm = distance_matrix(sample.graphs, filt, spec, parallelism=args.jobs, seed=rep_seed,
                                 allow_missing=args.allow_missing)
            acc = one_nn_classify(dm).accuracy
            accs.append(acc)
            if args.save_distances:
                out = Path(args.save_distances)
                out.mkdir(parents=True, exist_ok=True)
                np.savetxt(out / f"{filt.replace(':', '_').replace('+', '_plus_')}_rep{rep}.csv",
                           dm.values, delimiter=",", fmt="%.17g")
        row = {
            "dataset": coll.name,
            "filter": filt,
            "solver": args.solver,
            "c1": ";".join(f"{c:.6g}" for c in c1s),
            "sample_size": k,
            "reps": args.reps,
            "accuracy_mean": float(np.mean(accs)),
            "accuracy_std": float(np.std(accs)),
            "accuracies": ";".join(f"{a:.6f}" for a in accs),
        }
        rows.append(row)
        print(f"{filt:<20s} accuracy {row['accuracy_mean']:.4f} +- {row['accuracy_std']:.4f}", file=sys.stderr)
    meta = _metadata(args, dataset=coll.name, provenance=coll.provenance, checksum=coll.checksum or "-",
                     filters=",".join(filters), solver=args.solver, preset=args.preset)
    return rows, meta


# demo-ordering -------------------------------------------------------------

def ordering_fixture() -> List[Graph]:
    """An 8-vertex ring and seven variants: local chords, a long chord, cuts."""
    from .generators import ring_with_chords

    def ring_minus(removed, chords=()):
        edges = [(i, (i + 1) % 8) for i in range(8) if (i, (i + 1) % 8) not in removed]
        return Graph.from_edges(8, edges + list(chords))

    return [
        ring_with_chords(8),
        ring_with_chords(8, [(0, 2)]),
        ring_with_chords(8, [(0, 2), (4, 6)]),
        ring_with_chords(8, [(1, 3), (2, 4), (5, 7)]),
        ring_minus({(0, 1)}, [(0, 2)]),
        ring_with_chords(8, [(0, 4)]),
        ring_minus({(3, 4)}),
        ring_minus({(0, 1), (4, 5)}),
    ]


def best_exact_distance(g_ref: Graph, g: Graph, filt: str, seed: int) -> float:
    """Exact distance under the best alignment found (exhaustive when n <= 8)."""
    f1, f2 = materialize(g_ref, filt), materialize(g, filt)
    if f1.n == f2.n and f1.n <= BRUTE_FORCE_MAX_N:
        return _clean(brute_force_align(f1, f2).exact)
    if f1.n != f2.n:
        raise UsageError("demo-ordering compares graphs of equal size")
    best = exact_distance(f1, f2)
    for method in METHODS:
        spec = preset("er-align", method, parse_filter(filt).kind)
        res = spec.solve(f1, f2, derive_seed(seed, method))
        best = min(best, exact_distance(f1, f2, res.hard.matrix.T))
    return _clean(best)


def run_demo(args) -> tuple:
    if args.reference:
        ref = load_edge_list(args.reference)
        names = ["reference"] + [Path(p).name for p in args.graphs]
        graphs = [ref] + [load_edge_list(p) for p in args.graphs]
    else:
        graphs = ordering_fixture()
        names = [f"G{i}" for i in range(len(graphs))]
    filters = [str(parse_filter(f)) for f in args.filters]
    rows = []
    for filt in filters:
        d = [best_exact_distance(graphs[0], g, filt, derive_seed(args.seed, "demo", filt, i))
             for i, g in enumerate(graphs)]
        order = np.lexsort((np.arange(len(d)), np.round(d, 12)))
        for rank, i in enumerate(order):
            rows.append({"filter": filt, "rank": rank, "graph": names[i], "distance": d[i]})
        print(f"{filt:<10s} " + " ".join(names[i] for i in order), file=sys.stderr)
    return rows, _metadata(args, filters=",".join(filters))


# parser --------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser):
    g = p.add_argument_group("common options")
    g.add_argument("--seed", type=int, default=0, help="master random seed (default: 0)")
    g.add_argument("--jobs", type=int, default=None,
                   help="worker processes (default: $FGOT_JOBS, else the number of logical cores)")
    g.add_argument("-o", "--output", default="-", help="output file, '-' for stdout (default)")
    g.add_argument("--format", choices=("csv", "jsonl"), default="csv", help="output format (default: csv)")
    g.add_argument("--with-timing", action="store_true",
                   help="add a wall_time column (makes output differ between runs)")
    g.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def _add_solver(p: argparse.ArgumentParser, default_preset: str):
    g = p.add_argument_group("solver options")
    g.add_argument("--preset", choices=PRESETS, default=default_preset,
                   help=f"hyperparameter constants (default: {default_preset})")
    g.add_argument("--c1", type=float, default=None, help="override the MGD entropic constant c1")
    g.add_argument("--c2", type=float, default=None, help="override the stochastic step constant c2")
    g.add_argument("--epsilon", type=float, default=None, help="absolute MGD entropic weight (overrides c1)")
    g.add_argument("--alpha", type=float, default=None, help="absolute step size (overrides the preset)")
    g.add_argument("--max-iters", type=int, default=None, help="iteration cap for the solver")
    g.add_argument("--samples", type=int, default=None, help="samples per stochastic iteration (default: 5)")
    g.add_argument("--parametrization", choices=("positive", "log"), default=None,
                   help="how stochastic samples become couplings (default: positive)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fgot", description="Filter graph distances and graph alignment.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("align", help="align two graphs", description="Align two graphs and report the result.")
    p.add_argument("--g1", required=True, help="first graph: edge-list file or spec er:N[:P], sbm:N:K, ring:N")
    p.add_argument("--g2", required=True, help="second graph: as --g1, or 'perm' for a shuffled copy of G1")
    p.add_argument("--filter", default="sq", help="filter, e.g. sq, pinv-sqrt, heat:0.8, pinv-sqrt+sq (default: sq)")
    p.add_argument("--solver", choices=METHODS, default="smgd", help="solver (default: smgd)")
    p.add_argument("--oracle", action="store_true", help=f"also brute-force the optimum (n <= {BRUTE_FORCE_MAX_N})")
    _add_solver(p, "er-align")
    _add_common(p)
    p.set_defaults(run=run_align)

    p = sub.add_parser("benchmark-alignment", help="Frobenius error of ER alignment across sizes",
                       description="Align pairs of independent Erdos-Renyi graphs over a size grid.")
    p.add_argument("--sizes", type=_csv_list(int), default=[10, 20, 30], help="graph sizes (default: 10,20,30)")
    p.add_argument("--reps", type=int, default=20, help="pairs per size (default: 20)")
    p.add_argument("--methods", type=_csv_list(), default=["mgd:sq", "smgd:sq", "mgd:pinv-sqrt", "smgd:pinv-sqrt"],
                   help="solver:filter list (default: mgd:sq,smgd:sq,mgd:pinv-sqrt,smgd:pinv-sqrt)")
    p.add_argument("--p", type=float, default=DEFAULT_ER_P, help=f"edge probability (default: {DEFAULT_ER_P})")
    _add_solver(p, "er-align")
    _add_common(p)
    p.set_defaults(run=run_benchmark)

    p = sub.add_parser("community", help="community alignment on SBM graphs",
                       description="Align a 4-community SBM with a fused copy (fused) or with a smaller SBM "
                                   "(random-size) and score the alignment by NMI.")
    p.add_argument("--experiment", choices=("fused", "random-size"), default="fused",
                   help="experiment type (default: fused)")
    p.add_argument("--fractions", type=_csv_list(float), default=[0.0, 0.1, 0.2, 0.3],
                   help="fused-node fractions for the fused experiment (default: 0,0.1,0.2,0.3)")
    p.add_argument("--sizes", type=_csv_list(int), default=[12, 16, 20, 24],
                   help="second-graph sizes for random-size (default: 12,16,20,24)")
    p.add_argument("--filters", type=_csv_list(), default=["pinv-sqrt", "heat:0.2", "heat:0.8"],
                   help="filters (default: pinv-sqrt,heat:0.2,heat:0.8)")
    p.add_argument("--solvers", type=_csv_list(), default=["mgd", "smgd"], help="solvers (default: mgd,smgd)")
    p.add_argument("--reps", type=int, default=20, help="repetitions (default: 20)")
    p.add_argument("--n", type=int, default=24, help="size of the reference SBM (default: 24)")
    p.add_argument("--k", type=int, default=4, help="number of communities (default: 4)")
    p.add_argument("--p-in", type=float, default=DEFAULT_P_IN, help=f"intra-community probability (default: {DEFAULT_P_IN})")
    p.add_argument("--p-out", type=float, default=DEFAULT_P_OUT, help=f"inter-community probability (default: {DEFAULT_P_OUT})")
    _add_solver(p, "sbm-community")
    _add_common(p)
    p.set_defaults(run=run_community)

    p = sub.add_parser("classify", help="1-NN graph classification from pairwise distances",
                       description="Leave-one-out 1-NN accuracy on a synthetic task or a TUDataset directory.")
    p.add_argument("--dataset", default="synthetic",
                   help="'synthetic' (ER vs SBM) or a TUDataset directory (default: synthetic)")
    p.add_argument("--name", default=None, help="TUDataset name (default: the directory name)")
    p.add_argument("--sample-size", type=int, default=None, help="graphs sampled per repetition (default: all)")
    p.add_argument("--reps", type=int, default=1, help="repetitions (default: 1)")
    p.add_argument("--filters", type=_csv_list(), default=["heat:0.8"],
                   help="filters, or 'all6' for the six reference filters (default: heat:0.8)")
    p.add_argument("--solver", choices=METHODS, default="mgd", help="solver (default: mgd)")
    p.add_argument("--per-class", type=int, default=30, help="synthetic graphs per class (default: 30)")
    p.add_argument("--n", type=int, default=20, help="synthetic graph size (default: 20)")
    p.add_argument("--save-distances", default=None, help="directory to store the distance matrices as CSV")
    p.add_argument("--allow-missing", action="store_true", help="skip pairs the solver failed on instead of aborting")
    _add_solver(p, "classify-linesearch")
    _add_common(p)
    p.set_defaults(run=run_classify)

    p = sub.add_parser("demo-ordering", help="order graphs by filter distance to a reference",
                       description="Rank graphs by exact filter distance to a reference under each filter.")
    p.add_argument("--reference", default=None, help="reference edge-list file (default: built-in ring fixture)")
    p.add_argument("--graphs", nargs="*", default=[], help="edge-list files to rank against --reference")
    p.add_argument("--filters", type=_csv_list(), default=list(DEMO_FILTERS),
                   help="filters (default: heat:5,pinv-sqrt,heat:0.5,sqrt,sq)")
    _add_common(p)
    p.set_defaults(run=run_demo)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.jobs is None:
            args.jobs = default_jobs()
        if args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        rows, meta = args.run(args)
        write_results(rows, args.output, args.format, meta)
    except (NumericError, FloatingPointError) as exc:
        print(f"fgot: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValidationError as exc:
        print(f"fgot: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return 0


if __name__ == "__main__":
    sys.exit(main())
