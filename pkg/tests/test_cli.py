import subprocess
import sys

import pytest

from fgot.cli import DEMO_FILTERS, build_parser, expand_filters, main, ordering_fixture
from fgot.datasets import read_results
from fgot.filters import STANDARD_FILTERS, parse_filter

COMMANDS = ("align", "benchmark-alignment", "community", "classify", "demo-ordering")

QUICK = {
    "align": ["align", "--g1", "er:6", "--g2", "perm", "--filter", "sq", "--solver", "smgd", "--max-iters", "40"],
    "benchmark-alignment": ["benchmark-alignment", "--sizes", "5,6", "--reps", "2", "--max-iters", "30"],
    "community": ["community", "--fractions", "0,0.2", "--reps", "2", "--n", "12", "--k", "2",
                  "--filters", "heat:0.8", "--max-iters", "30"],
    "classify": ["classify", "--per-class", "4", "--n", "8", "--c1", "0.02", "--max-iters", "30"],
    "demo-ordering": ["demo-ordering", "--filters", "heat:5,sq"],
}


def run(argv, tmp_path, name="out.csv"):
    out = tmp_path / name
    code = main(argv + ["--jobs", "1", "-o", str(out)])
    return code, out


@pytest.mark.parametrize("cmd", COMMANDS)
def test_help_exits_zero_and_documents_flags(cmd):
    proc = subprocess.run([sys.executable, "-m", "fgot.cli", cmd, "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    sub = build_parser()._subparsers._group_actions[0].choices[cmd]
    for action in sub._actions:
        for flag in action.option_strings:
            assert flag in proc.stdout
        if action.option_strings and action.help is None:
            pytest.fail(f"{cmd} {action.option_strings} has no help text")


@pytest.mark.parametrize("cmd", COMMANDS)
def test_rerun_is_byte_identical(cmd, tmp_path):
    code1, out1 = run(QUICK[cmd] + ["--seed", "7"], tmp_path, "a.csv")
    code2, out2 = run(QUICK[cmd] + ["--seed", "7"], tmp_path, "b.csv")
    assert code1 == code2 == 0
    assert out1.read_bytes() == out2.read_bytes()


def test_parallel_matches_serial(tmp_path):
    argv = QUICK["benchmark-alignment"] + ["--seed", "3", "-o"]
    assert main(argv + [str(tmp_path / "s.csv"), "--jobs", "1"]) == 0
    assert main(argv + [str(tmp_path / "p.csv"), "--jobs", "2"]) == 0
    assert (tmp_path / "s.csv").read_bytes() == (tmp_path / "p.csv").read_bytes()


def test_align_report_and_oracle(tmp_path, capsys):
    code, out = run(QUICK["align"] + ["--oracle"], tmp_path)
    assert code == 0
    meta, rows = read_results(out)
    assert meta["command"] == "align" and len(rows) == 1
    row = rows[0]
    for col in ("final_cost", "exact_distance", "frobenius", "assignment", "oracle_exact", "oracle_gap"):
        assert col in row
    assert row["oracle_exact"] == pytest.approx(0.0, abs=1e-6)
    assert row["oracle_gap"] == pytest.approx(row["exact_distance"], abs=1e-6)
    assert "aligned in" in capsys.readouterr().err


def test_align_edge_list_files(tmp_path):
    (tmp_path / "a.edges").write_text("0 1\n1 2\n2 3\n")
    (tmp_path / "b.edges").write_text("0 1\n1 2\n2 3\n")
    code, out = run(["align", "--g1", str(tmp_path / "a.edges"), "--g2", str(tmp_path / "b.edges"),
                     "--filter", "sq", "--solver", "mgd", "--seed", "1"], tmp_path)
    assert code == 0
    assert read_results(out)[1][0]["n1"] == 4


def test_benchmark_row_count(tmp_path):
    code, out = run(QUICK["benchmark-alignment"], tmp_path)
    assert code == 0
    meta, rows = read_results(out)
    # 2 sizes x 2 reps x 4 default methods
    assert len(rows) == 16
    assert list(rows[0]) == ["size", "method", "filter", "seed", "frobenius", "final_cost"]


def test_community_schema_and_rectangular(tmp_path):
    code, out = run(QUICK["community"], tmp_path)
    assert code == 0
    _, rows = read_results(out)
    assert list(rows[0])[:6] == ["fraction_fused", "method", "filter", "seed", "nmi", "frobenius"]
    fused = [r for r in rows if r["fraction_fused"] > 0]
    assert fused and all(r["frobenius"] == "" for r in fused)
    assert all(r["frobenius"] != "" for r in rows if r["fraction_fused"] == 0)


def test_community_random_size(tmp_path):
    code, out = run(["community", "--experiment", "random-size", "--sizes", "8,10", "--n", "10", "--k", "2",
                     "--reps", "1", "--filters", "heat:0.8", "--solvers", "mgd"], tmp_path)
    assert code == 0
    _, rows = read_results(out)
    assert [r["size2"] for r in rows] == [8, 10]


def test_classify_report(tmp_path):
    dist_dir = tmp_path / "dist"
    code, out = run(QUICK["classify"] + ["--save-distances", str(dist_dir)], tmp_path)
    assert code == 0
    _, rows = read_results(out)
    assert rows[0]["filter"] == "heat:0.8" and 0 <= rows[0]["accuracy_mean"] <= 1
    assert list(dist_dir.iterdir())


def test_classify_tudataset(tmp_path):
    d = tmp_path / "TOY"
    d.mkdir()
    # six triangles-or-paths, two classes
    edges, ind, labels = [], [], []
    for gi in range(6):
        base = 3 * gi
        edges += [(base + 1, base + 2), (base + 2, base + 3)] + ([(base + 1, base + 3)] if gi % 2 else [])
        ind += [gi + 1] * 3
        labels.append(gi % 2)
    (d / "TOY_A.txt").write_text("".join(f"{a}, {b}\n{b}, {a}\n" for a, b in edges))
    (d / "TOY_graph_indicator.txt").write_text("".join(f"{i}\n" for i in ind))
    (d / "TOY_graph_labels.txt").write_text("".join(f"{l}\n" for l in labels))
    code, out = run(["classify", "--dataset", str(d), "--filters", "heat:0.8", "--c1", "0.02",
                     "--sample-size", "4", "--reps", "2"], tmp_path)
    assert code == 0
    meta, rows = read_results(out)
    assert meta["dataset"] == "TOY" and len(meta["checksum"]) == 64
    assert rows[0]["reps"] == 2 and rows[0]["sample_size"] == 4


def test_all6_expansion():
    assert expand_filters(["all6"]) == list(STANDARD_FILTERS)
    assert len(STANDARD_FILTERS) == 6
    g5 = parse_filter("pinv-sqrt+heat:0.8")
    assert g5.kind == "sum" and str(g5) == STANDARD_FILTERS[4]


def test_demo_ordering_contract(tmp_path):
    code, out = run(["demo-ordering"], tmp_path)
    assert code == 0
    _, rows = read_results(out)
    names = [f"G{i}" for i in range(len(ordering_fixture()))]
    for filt in DEMO_FILTERS:
        ranked = sorted((r for r in rows if r["filter"] == filt), key=lambda r: r["rank"])
        assert sorted(r["graph"] for r in ranked) == names
        assert ranked[0]["graph"] == "G0" and ranked[0]["distance"] == pytest.approx(0.0, abs=1e-9)
        assert all(a["distance"] <= b["distance"] for a, b in zip(ranked, ranked[1:]))

    def rank(filt, graph):
        return next(r["rank"] for r in rows if r["filter"] == filt and r["graph"] == graph)

    # the broken ring G6 is far under the smooth heat:5 filter and close under sq
    assert rank("heat:5", "G6") > rank("sq", "G6")


def test_usage_errors_exit_2(tmp_path, capsys):
    assert main(["align", "--g1", "er:5", "--g2", "perm", "--filter", "bogus", "-o", str(tmp_path / "x")]) == 2
    assert main(["align", "--g1", "nope.edges", "--g2", "perm", "-o", str(tmp_path / "x")]) == 2
    assert main(["align", "--g1", "er:5", "--g2", "perm", "--jobs", "0"]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["align", "--solver", "ga"])
    assert exc.value.code == 2
    proc = subprocess.run([sys.executable, "-m", "fgot.cli", "classify", "--reps", "x"], capture_output=True)
    assert proc.returncode == 2


def test_numeric_failure_exit_3(tmp_path, capsys):
    code = main(["align", "--g1", "er:5", "--g2", "perm", "--solver", "mgd", "--epsilon", "0", "--alpha", "1e308",
                 "-o", str(tmp_path / "x")])
    assert code == 3
    assert "numeric failure" in capsys.readouterr().err


def test_console_script_installed():
    proc = subprocess.run(["fgot", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("fgot ")
