from pathlib import Path

import pytest

from diht.errors import ConfigError
from diht.harness import (EXIT_DIVERGED, EXIT_MAX_ITER, EXIT_OK, EXIT_USAGE, ExperimentConfig,
                          main, parse_config, parse_matrix, read_csv_rows)
from diht.netsim import Topology
from diht.recovery import load_problem

GOLDEN = Path(__file__).parent / "golden"

SMALL = """\
# tiny problem
name = tiny
N = 60
M = 24
P = 4
K = 4
alpha = 0.6
problem_seed = 2
topology = er:0.6   # kind:param form
topology_seed = 1
max_iter = 200
"""


@pytest.fixture
def cfg_file(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(SMALL)
    return path


def run_dirs(root):
    return sorted(p for p in Path(root).iterdir() if p.is_dir())


def test_parse_config_values():
    cfg = parse_config(SMALL)
    assert (cfg.N, cfg.M, cfg.P, cfg.K) == (60, 24, 4, 4)
    assert cfg.topology == "er" and cfg.topology_param == 0.6
    assert cfg.alpha == "0.6" and cfg.algorithm == "diht" and cfg.delivery == "sync"


def test_parse_config_defaults_to_random_problem():
    cfg = parse_config("")
    assert (cfg.N, cfg.M, cfg.P, cfg.K, cfg.topology_param) == (1000, 250, 50, 20, 0.25)
    assert cfg.max_iter == 2000 and cfg.tol == 0.01


@pytest.mark.parametrize("text,field", [
    ("bogus = 1", "bogus"),
    ("N = ten", "N"),
    ("K = 0", "K"),
    ("alpha = -1", "alpha"),
    ("topology = torus", "topology"),
    ("algorithm = admm", "algorithm"),
    ("delivery = lossy", "delivery"),
    ("topology = file\ntopology_file = /nonexistent", "topology_file"),
    ("trace = maybe", "trace"),
])
def test_invalid_config_names_field(text, field):
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    assert exc.value.field == field


def test_config_line_without_equals():
    with pytest.raises(ConfigError, match="line 1"):
        parse_config("N 10")


def test_config_hash_ignores_output_dir_only():
    a = parse_config(SMALL)
    b = parse_config(SMALL + "output_dir = /elsewhere\n")
    c = parse_config(SMALL.replace("problem_seed = 2", "problem_seed = 3"))
    assert a.config_hash == b.config_hash != c.config_hash
    assert len(a.config_hash) == 12
    assert parse_config(a.to_text()) == a


def test_matrix_expansion_sorted_by_hash():
    cells = parse_matrix("N = 60\nM = 24\nP = 4\nK = 4\ntopology = er:0.5 | complete\n"
                         "problem_seed = 1 | 2 | 3\n")
    assert len(cells) == 6
    assert [c.config_hash for c in cells] == sorted(c.config_hash for c in cells)
    assert parse_matrix("# nothing here\n") == []


def test_run_writes_artifacts(cfg_file, tmp_path):
    out = tmp_path / "runs"
    assert main(["run", str(cfg_file), "--output-dir", str(out)]) == EXIT_OK
    (run,) = run_dirs(out)
    assert run.name.startswith("tiny-")
    assert {p.name for p in run.iterdir()} == {"config.txt", "iterations.csv", "summary.csv",
                                              "timing.txt"}
    assert (run / "iterations.csv").read_text().startswith("# schema=diht-iterations/1\n")
    rows = read_csv_rows(run / "iterations.csv")
    assert list(rows[0]) == ["t", "sums", "messages", "ticks", "relative_error"]
    summary = read_csv_rows(run / "summary.csv")[0]
    assert summary["status"] == "converged"
    assert int(summary["iterations"]) == len(rows) - 1
    assert int(summary["total_messages"]) == int(rows[-1]["messages"])
    assert float(summary["final_error"]) <= 0.01


def test_run_is_byte_reproducible(cfg_file, tmp_path):
    for root in ("a", "b"):
        assert main(["run", str(cfg_file), "--output-dir", str(tmp_path / root)]) == EXIT_OK
    (ra,), (rb,) = run_dirs(tmp_path / "a"), run_dirs(tmp_path / "b")
    assert ra.name == rb.name
    for name in ("config.txt", "iterations.csv", "summary.csv"):
        assert (ra / name).read_bytes() == (rb / name).read_bytes()


def test_output_root_from_environment(cfg_file, tmp_path, monkeypatch):
    monkeypatch.setenv("DIHT_OUTPUT_ROOT", str(tmp_path / "env"))
    assert main(["run", str(cfg_file)]) == EXIT_OK
    assert len(run_dirs(tmp_path / "env")) == 1


def test_set_overrides_and_exit_codes(cfg_file, tmp_path):
    out = str(tmp_path / "o")
    assert main(["run", str(cfg_file), "--output-dir", out, "--set", "max_iter=2"]) \
        == EXIT_MAX_ITER
    assert main(["run", str(cfg_file), "--output-dir", out, "--set", "alpha=8"]) == EXIT_DIVERGED
    assert main(["run", str(cfg_file), "--output-dir", out, "--set", "K=zero"]) == EXIT_USAGE


def test_usage_errors_exit_64(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as exc:
        main(["run"])
    assert exc.value.code == EXIT_USAGE
    bad = tmp_path / "bad.cfg"
    bad.write_text("N = 10\nP = 3\nM = 10\n")
    assert main(["run", str(bad), "--output-dir", str(tmp_path)]) == EXIT_USAGE
    assert "error" in capsys.readouterr().err


def test_missing_config_file_is_usage_error(tmp_path):
    assert main(["run", str(tmp_path / "missing.cfg")]) == EXIT_USAGE


def test_naive_run_message_formula(cfg_file, tmp_path):
    out = tmp_path / "n"
    assert main(["run", str(cfg_file), "--output-dir", str(out),
                 "--set", "algorithm=naive"]) == EXIT_OK
    (run,) = run_dirs(out)
    s = read_csv_rows(run / "summary.csv")[0]
    T1, pre = int(s["iterations"]), int(s["preprocessing_messages"])
    assert int(s["total_messages"]) == 3 * (4 - 1) * 60 * T1 + pre
    assert main(["plot-data", str(run)]) == EXIT_OK
    sums = (run / "sums_per_iteration.csv").read_text().splitlines()
    assert sums[0] == "iteration,sums"
    assert {line.split(",")[1] for line in sums[1:]} == {"60"}


def test_centralized_plot_data_has_no_sums(cfg_file, tmp_path):
    out = tmp_path / "c"
    assert main(["run", str(cfg_file), "--output-dir", str(out),
                 "--set", "algorithm=centralized"]) == EXIT_OK
    (run,) = run_dirs(out)
    assert main(["plot-data", str(run), "--out", str(tmp_path / "plots")]) == EXIT_OK
    assert (tmp_path / "plots" / "sums_per_iteration.csv").read_text() == "iteration,sums\n"
    errs = (tmp_path / "plots" / "error_per_iteration.csv").read_text().splitlines()
    assert errs[0] == "iteration,relative_error" and errs[1] == "0,1.0"


def test_plot_data_missing_artifacts(tmp_path):
    assert main(["plot-data", str(tmp_path)]) == EXIT_USAGE


def test_trace_ta_default_matches_golden(capsys):
    assert main(["trace-ta"]) == EXIT_OK
    assert capsys.readouterr().out == (GOLDEN / "ta_trace_k2.csv").read_text()


def test_trace_ta_k1_to_file(tmp_path):
    assert main(["trace-ta", "--k", "1", "--out", str(tmp_path / "t.csv")]) == EXIT_OK
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[-1].endswith('"{(4,72)}"')
    assert len(lines) - 1 <= 5
    assert main(["trace-ta", "--k", "11"]) == EXIT_USAGE


def test_sweep_empty_matrix(tmp_path):
    m = tmp_path / "empty.matrix"
    m.write_text("")
    assert main(["sweep", str(m), "--output-dir", str(tmp_path / "s")]) == EXIT_OK
    rows = read_csv_rows(tmp_path / "s" / "results.csv")
    assert rows == []


def test_sweep_isolates_failing_cell(tmp_path):
    m = tmp_path / "m.matrix"
    m.write_text(SMALL.replace("topology = er:0.6   # kind:param form",
                               "topology = er:0.6 | complete | geometric:0.001"))
    assert main(["sweep", str(m), "--output-dir", str(tmp_path / "s")]) == EXIT_OK
    rows = read_csv_rows(tmp_path / "s" / "results.csv")
    assert [r["config_hash"] for r in rows] == sorted(r["config_hash"] for r in rows)
    status = {r["topology"]: r["status"] for r in rows}
    assert status == {"er:0.6": "converged", "complete": "converged",
                      "geometric:0.001": "error"}
    failed = next(r for r in rows if r["status"] == "error")
    assert "GenerationError" in failed["error"]
    table = read_csv_rows(tmp_path / "s" / "table.csv")
    assert [r["topology"] for r in table] == ["complete", "er:0.6", "geometric:0.001"]


def test_sweep_parallel_matches_serial(tmp_path):
    m = tmp_path / "m.matrix"
    m.write_text(SMALL.replace("problem_seed = 2", "problem_seed = 2 | 3"))
    assert main(["sweep", str(m), "--output-dir", str(tmp_path / "a")]) == EXIT_OK
    assert main(["sweep", str(m), "--output-dir", str(tmp_path / "b"), "--jobs", "2"]) \
        == EXIT_OK
    assert ((tmp_path / "a" / "results.csv").read_bytes()
            == (tmp_path / "b" / "results.csv").read_bytes())


def test_generated_files_feed_a_run(tmp_path):
    prob, topo = tmp_path / "p.txt", tmp_path / "g.txt"
    assert main(["gen-problem", "--N", "60", "--M", "24", "--P", "4", "--K", "4",
                 "--seed", "2", "--alpha", "0.6", "--out", str(prob)]) == EXIT_OK
    assert main(["gen-topology", "--kind", "er", "--P", "4", "--param", "0.6", "--seed", "1",
                 "--out", str(topo)]) == EXIT_OK
    assert load_problem(prob).P == 4 and Topology.read_edge_list(topo).P == 4
    cfg = tmp_path / "f.cfg"
    cfg.write_text(f"name = files\nproblem_file = {prob}\ntopology = file\n"
                   f"topology_file = {topo}\n")
    assert main(["run", str(cfg), "--output-dir", str(tmp_path / "r")]) == EXIT_OK
    # same problem and graph as the inline config, so the same trajectory
    gen = tmp_path / "tiny.cfg"
    gen.write_text(SMALL)
    assert main(["run", str(gen), "--output-dir", str(tmp_path / "g")]) == EXIT_OK
    (a,), (b,) = run_dirs(tmp_path / "r"), run_dirs(tmp_path / "g")
    assert (a / "iterations.csv").read_bytes() == (b / "iterations.csv").read_bytes()


def test_topology_file_size_mismatch(tmp_path):
    topo = tmp_path / "g.txt"
    Topology.path(3).write_edge_list(topo)
    cfg = tmp_path / "f.cfg"
    cfg.write_text(SMALL + f"topology = file\ntopology_file = {topo}\n")
    assert main(["run", str(cfg), "--output-dir", str(tmp_path)]) == EXIT_USAGE


def test_default_config_dataclass_is_valid():
    assert ExperimentConfig().validate().run_id.startswith("random-")
