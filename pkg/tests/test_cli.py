"""End-to-end runs of the command line driver."""

import json
import subprocess
import sys

import pytest

from wc4dvar.burgers import load_problem
from wc4dvar.cli import main
from wc4dvar.experiments import load_store, read_trace_csv

SMALL = ["--n", "24", "--dx", "0.04", "--dt", "2e-5", "--nsub", "6",
         "--steps-per-subwindow", "20", "--obs-per-subwindow", "6"]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """problem JSON plus a two-variant results store, built via the CLI."""
    root = tmp_path_factory.mktemp("cli")
    problem = root / "problem.json"
    assert main(["generate", "--seed", "3", "--out", str(problem)] + SMALL) == 0
    results = root / "results"
    code = main(["run", "--problem", str(problem),
                 "--variant", "SAQ1-M-0", "FOQ1-D",
                 "--max-outer", "3", "--n-inner", "20",
                 "--out-dir", str(results)])
    assert code == 0
    return root


def test_generate_emits_loadable_problem(workspace):
    problem = load_problem(workspace / "problem.json")
    assert problem.config.n == 24
    assert problem.seed == 3


def test_generate_rejects_bad_config(tmp_path, capsys):
    code = main(["generate", "--n", "0", "--out", str(tmp_path / "p.json")])
    assert code == 1
    assert "error:" in capsys.readouterr().err


def test_run_writes_store_and_figures(workspace):
    results = workspace / "results"
    store = load_store(results)
    assert sorted(store.summaries) == ["FOQ1-D", "SAQ1-M-0"]
    assert store.J_star < store.J0
    for name in ("SAQ1-M-0", "FOQ1-D"):
        rows = read_trace_csv(results / "traces" / f"{name}.csv")
        assert rows, name
        assert (results / "figures" / f"{name}.png").stat().st_size > 0


def test_run_unknown_variant_fails_cleanly(workspace, capsys):
    code = main(["run", "--problem", str(workspace / "problem.json"),
                 "--variant", "XXQ1-M-0", "--out-dir",
                 str(workspace / "nope")])
    assert code == 1
    assert "error:" in capsys.readouterr().err


def test_cost_prices_stored_runs(workspace):
    results = workspace / "results"
    code = main(["cost", "--results", str(results),
                 "--p", "1", "50", "--c-dinv", "0.5", "--mode", "fully_mpi"])
    assert code == 0
    lines = (results / "costs.csv").read_text().splitlines()
    assert lines[0] == "# schema: wc4dvar-costs-v1"
    # 2 variants x 2 p x 1 c_dinv x 1 mode
    assert len(lines) == 2 + 4


def test_map_emits_csv_json_and_figures(workspace):
    results = workspace / "results"
    code = main(["map", "--results", str(results),
                 "--p", "1", "50", "--c-dinv", "0.5", "2.0",
                 "--rho", "0.1", "0.01", "--mode", "fully_mpi"])
    assert code == 0
    lines = (results / "map.csv").read_text().splitlines()
    assert lines[0] == "# schema: wc4dvar-map-v1"
    assert len(lines) == 2 + 2 * 2 * 2
    payload = json.loads((results / "map.json").read_text())
    assert payload["schema"] == "wc4dvar-map-v1"
    for p in (1, 50):
        assert (results / f"map_fully_mpi_p{p}.png").stat().st_size > 0
        assert (results / f"surface_fully_mpi_p{p}.png").stat().st_size > 0


def test_map_on_missing_results_fails_cleanly(tmp_path, capsys):
    code = main(["map", "--results", str(tmp_path / "missing")])
    assert code == 1
    assert "error:" in capsys.readouterr().err


def test_console_script_help():
    out = subprocess.run([sys.executable, "-m", "wc4dvar.cli", "--help"],
                         capture_output=True, text=True)
    assert out.returncode == 0
    for word in ("generate", "run", "cost", "map"):
        assert word in out.stdout
