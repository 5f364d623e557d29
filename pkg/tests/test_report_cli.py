import os
import subprocess
import sys

import pytest

from manigap.cli import run
from manigap.config import SCHEMA, parse_config
from manigap.errors import IOFailure
from manigap.harness import CellResult, GapReport, eig_convergence_run
from manigap.manifold import ManifoldSpec
from manigap.report import CELL_HEADER, emit_report, summary_csv, write_atomic

SMALL_NODE = """kernel.kind = epsilon
sweep.n_values = 16, 32, 64
sweep.trials = 2
sweep.eval_n = 128
training.epochs = 2
architecture.width = 2
"""


def test_degenerate_single_row_report(tmp_path):
    rep = GapReport([CellResult(32, 0, 0.1, 0.3, 0.2)])
    paths = emit_report(rep, tmp_path)
    cells = open(paths[0]).read().splitlines()
    assert cells[0] == CELL_HEADER and len(cells) == 2
    summary = open(paths[1]).read()
    assert summary.startswith("n,gap_mean,gap_std\n32,0.20000000000000001,0\n")
    assert "# fit slope=0 " in summary and "degenerate=true" in summary


def test_summary_footer_records_unflagged_fit():
    rows = [CellResult(n, 0, 0, 1 / n, 1 / n, train_acc=0.99 if n == 10 else 0.5) for n in (10, 20, 40, 80)]
    text = summary_csv(GapReport(rows))
    assert "# mode=loss" in text
    assert "# fit_unflagged " in text and "points=3" in text


def test_eig_table_emission(tmp_path):
    table = eig_convergence_run(ManifoldSpec.circle(), "epsilon", [50, 100], 2, i_max=4)
    paths = emit_report(table, tmp_path, name="eig")
    summary = open(paths[1]).read().splitlines()
    assert summary[0] == "n,i,mean_error,analytic_ratio"
    assert len([l for l in summary if not l.startswith("#")]) == 1 + 2 * 3


def test_write_atomic_failure_names_the_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(IOFailure) as info:
        write_atomic(blocker / "out.csv", "data")
    assert str(blocker) in str(info.value)
    assert isinstance(info.value, OSError)


def test_emit_rejects_unknown_results(tmp_path):
    with pytest.raises(TypeError):
        emit_report({"a": 1}, tmp_path)


def _run_cli(tmp_path, command, text, out_name, *extra):
    cfg = tmp_path / f"{command}.cfg"
    cfg.write_text(text)
    out = tmp_path / out_name
    return run([command, "--config", str(cfg), "--out", str(out), *extra]), out


def test_rerun_is_byte_identical_except_manifest_timestamp(tmp_path, capsys):
    code_a, a = _run_cli(tmp_path, "node-gap", SMALL_NODE, "a")
    code_b, b = _run_cli(tmp_path, "node-gap", SMALL_NODE, "b", "--threads", "2")
    assert code_a == code_b == 0
    names = sorted(os.listdir(a))
    assert names == sorted(os.listdir(b)) and "manifest.txt" in names
    for name in names:
        left, right = (open(d / name, "rb").read() for d in (a, b))
        if name == "manifest.txt":
            strip = lambda t: [l for l in t.splitlines() if b"written" not in l and b"run.threads" not in l]
            assert strip(left) == strip(right)
        else:
            assert left == right
    printed = capsys.readouterr().out.split()
    assert str(a / "node_cells.csv") in printed


def test_manifest_round_trips_every_key(tmp_path):
    code, out = _run_cli(tmp_path, "node-gap", SMALL_NODE, "m", "--seed", "5")
    assert code == 0
    text = (out / "manifest.txt").read_text()
    cfg = parse_config(text, "node-gap")
    assert cfg["run.seed"] == 5 and cfg["sweep.n_values"] == (16, 32, 64)
    keys = {line.split("=")[0].strip() for line in text.splitlines() if line and not line.startswith("#")}
    assert keys == {k for k in SCHEMA if k != "kernel.epsilon"}
    assert cfg.values == parse_config(SMALL_NODE + "run.seed = 5\n", "node-gap").values


@pytest.mark.parametrize("command,text", [
    ("build-graph", "kernel.kind = epsilon\nsweep.n_values = 20, 40\n"),
    ("eig-check", "kernel.kind = epsilon\nsweep.n_values = 40, 80\nsweep.trials = 2\nsweep.i_max = 3\n"),
    ("graph-gap", "kernel.kind = epsilon\nsweep.n_values = 10, 20\nsweep.trials = 1\nsweep.eval_n = 20\n"
                  "training.epochs = 1\n"),
    ("reg-sweep", SMALL_NODE + "sweep.mu_values = 0, 0.01\n"),
])
def test_commands_succeed(tmp_path, command, text):
    code, out = _run_cli(tmp_path, command, text, "o")
    assert code == 0
    assert (out / "manifest.txt").exists()


def test_mesh_commands(tmp_path):
    off = tmp_path / "box.off"
    v = [(x, y, z) for x in (0, 1) for y in (0, 2) for z in (0, 1)]
    quads = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    off.write_text("OFF\n8 6 0\n" + "".join(f"{a} {b} {c}\n" for a, b, c in v)
                   + "".join("4 " + " ".join(map(str, q)) + "\n" for q in quads))
    text = f"manifold.kind = mesh\nmanifold.mesh = {off}\nmanifold.radii = 1\nkernel.mode = fixed\n" \
           f"kernel.epsilon = 0.1\nsweep.n_values = 30\n"
    assert _run_cli(tmp_path, "build-graph", text, "g")[0] == 0
    graph = f"graph.meshes = {off}, {off}\ngraph.inputs = constant, x\nkernel.mode = fixed\n" \
            f"kernel.epsilon = 0.3\nsweep.n_values = 10, 20\nsweep.trials = 1\nsweep.eval_n = 20\n" \
            f"training.epochs = 1\n"
    assert _run_cli(tmp_path, "graph-gap", graph, "h")[0] == 0


@pytest.mark.parametrize("text", ["training.epoch = 3\n", "training.lr = fast\n",
                                  "kernel.mode = fixed\n", "manifold.kind = mesh\nmanifold.mesh = /nonexistent.off\n"])
def test_validation_errors_exit_one(tmp_path, capsys, text):
    code, _ = _run_cli(tmp_path, "build-graph", text, "o")
    assert code == 1
    assert capsys.readouterr().err.startswith("ERROR ")


def test_bad_override_exits_one(tmp_path, capsys):
    assert run(["eig-check", "--seed", "-3", "--out", str(tmp_path)]) == 1
    assert "ERROR invalid-config" in capsys.readouterr().err


def test_runtime_failure_exits_two(tmp_path, capsys):
    blocker = tmp_path / "taken"
    blocker.write_text("")
    cfg = tmp_path / "c.cfg"
    cfg.write_text("kernel.kind = epsilon\nsweep.n_values = 20\n")
    assert run(["build-graph", "--config", str(cfg), "--out", str(blocker)]) == 2
    err = capsys.readouterr().err
    assert err.startswith("ERROR io-error: ") and str(blocker) in err


def test_console_entry_point_exit_status(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("sweep.trials = zero\n")
    proc = subprocess.run([sys.executable, "-m", "manigap.cli", "node-gap", "--config", str(cfg)],
                          capture_output=True, text=True, cwd=tmp_path)
    assert proc.returncode == 1
    assert proc.stderr.startswith("ERROR invalid-config: line 1")
    assert not (tmp_path / "out").exists()
