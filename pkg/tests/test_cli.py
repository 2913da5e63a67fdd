import json
import os

import pytest

import main
from Core.errors import NoConvergence
from main import run_cli

PRESETS = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "Config", "Presets")
CUBE = os.path.join(PRESETS, "cube.json")
AXES = os.path.join(PRESETS, "axes.json")
COARSE = ["--grid-h", "0.25", "--grid-R", "4.5"]


@pytest.fixture(autouse=True)
def quiet_env(monkeypatch):
    monkeypatch.delenv("CAPMINK_LOG", raising=False)


@pytest.fixture
def small_box_config(tmp_path):
    path = tmp_path / "overlay.json"
    path.write_text(json.dumps({"min_box_ratio": 2.5}))
    return str(path)


def test_capacity_is_reproducible(tmp_path):
    first, second = tmp_path / "a.json", tmp_path / "b.json"
    assert run_cli(["capacity", CUBE, str(first)] + COARSE) == 0
    assert run_cli(["capacity", CUBE, str(second)] + COARSE) == 0
    assert first.read_bytes() == second.read_bytes()
    data = json.loads(first.read_text())
    assert len(data["digest"]) == 64
    assert data["value"] > 0
    assert len(data["facet_masses"]) == 6
    assert data["body"]["n"] == 3


def test_capacity_digest_tracks_config(tmp_path):
    first, second = tmp_path / "a.json", tmp_path / "b.json"
    run_cli(["capacity", CUBE, str(first)] + COARSE)
    run_cli(["capacity", CUBE, str(second), "--pexp", "1.5"] + COARSE)
    assert json.loads(first.read_text())["digest"] != json.loads(second.read_text())["digest"]


def test_capacity_saves_field(tmp_path):
    field = tmp_path / "field.npz"
    assert run_cli(["capacity", CUBE, str(tmp_path / "out.json"), "--field", str(field)] + COARSE) == 0
    assert field.exists()


def test_malformed_input_is_a_validation_error(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{ not json")
    out = tmp_path / "out.json"
    assert run_cli(["capacity", str(bad), str(out)] + COARSE) == 2
    assert not out.exists()


def test_missing_input_is_an_io_error(tmp_path):
    assert run_cli(["capacity", str(tmp_path / "missing.json")] + COARSE) == 4


def test_bad_arguments():
    assert run_cli([]) == 2
    assert run_cli(["capacity", CUBE, "--boundary", "neumann"]) == 2


def test_out_of_range_exponent(tmp_path):
    assert run_cli(["capacity", CUBE, str(tmp_path / "out.json"), "--pexp", "3.5"] + COARSE) == 2


def test_measure_command(tmp_path):
    out = tmp_path / "mu.json"
    assert run_cli(["measure", CUBE, str(out), "--p", "2.5"] + COARSE) == 0
    data = json.loads(out.read_text())
    assert data["n"] == 3 and len(data["atoms"]) == 6
    assert data["p"] == 2.5
    assert data["total_mass"] == pytest.approx(sum(atom["w"] for atom in data["atoms"]))


def test_solve_axes(tmp_path, small_box_config):
    out, mesh = tmp_path / "solution.json", tmp_path / "solution.obj"
    args = ["solve", AXES, str(out), "--config", small_box_config, "--grid-h", "0.1", "--grid-R", "2.0",
            "--mesh", str(mesh)]
    assert run_cli(args) == 0
    data = json.loads(out.read_text())
    assert data["converged"]
    assert data["offsets"] == pytest.approx([6 ** -0.5] * 6)
    assert data["problem5_residual"] <= 0.02
    assert mesh.read_text().count("\nf ") == 24


def test_solve_obj_format(tmp_path, small_box_config):
    out = tmp_path / "solution.obj"
    args = ["solve", AXES, str(out), "--format", "obj", "--config", small_box_config, "--grid-h", "0.1",
            "--grid-R", "2.0"]
    assert run_cli(args) == 0
    assert out.read_text().startswith("# 8 vertices, 6 facets")


def test_solve_reports_no_convergence(tmp_path, monkeypatch):
    def stalled(*args, **kwargs):
        raise NoConvergence("stalled")

    monkeypatch.setattr(main, "solve_discrete_lp", stalled)
    assert run_cli(["solve", AXES, str(tmp_path / "out.json")]) == 3


def test_unreadable_config_overlay(tmp_path):
    overlay = tmp_path / "overlay.json"
    overlay.write_text("[1, 2]")
    assert run_cli(["capacity", CUBE, "--config", str(overlay)] + COARSE) == 2


def test_check_command_writes_jsonl(tmp_path):
    out = tmp_path / "reports.jsonl"
    assert run_cli(["check", CUBE, str(out), "--checks", "centroid"] + COARSE) == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 1
    record = json.loads(lines[0])
    assert record["name"] == "centroid"
    assert record["passed"]


@pytest.mark.parametrize("checks", ["volume", "uniqueness"])
def test_check_rejects_unknown_or_mismatched(tmp_path, checks):
    assert run_cli(["check", CUBE, str(tmp_path / "r.jsonl"), "--checks", checks] + COARSE) == 2


@pytest.mark.parametrize("command", ["capacity", "measure"])
def test_obj_format_is_only_for_solve(tmp_path, command):
    out = tmp_path / "out.obj"
    assert run_cli([command, CUBE, str(out), "--format", "obj"] + COARSE) == 2
    assert not out.exists()
