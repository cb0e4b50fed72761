import json

import numpy as np
import pytest

from errors import ConfigError, ContractError
from make_synthetic_panel import simulate_panel
from run_manifest import (
    append_run_log,
    find_latest_run,
    is_partial,
    latest_run_dir,
    mark_partial,
    prepare_run_dir,
    read_manifest,
    require_complete,
    write_manifest,
)
from save_draws import load_draws, load_states, save_draws, save_states
from tools.stopwatch import end_stopwatch, start_stopwatch
from gibbs_sampler import run_chain


@pytest.fixture
def chain(small_panel, quick_model):
    stations, panel = small_panel
    return run_chain(panel, stations, quick_model, thin=4, rng=np.random.default_rng(0), label="demo")


def test_draws_file_keeps_header_and_records(tmp_path, chain):
    path = save_draws(tmp_path / "draws" / "demo.jsonl", chain)
    header = json.loads(path.read_text(encoding="utf-8").splitlines()[0])
    assert header["kind"] == "header"
    assert header["n_kept"] == chain.n_kept

    loaded = load_draws(path)
    assert np.array_equal(loaded.lam, chain.lam)
    assert np.array_equal(loaded.iteration_index, chain.iteration_index)
    assert loaded.acceptance_rate == chain.acceptance_rate
    assert loaded.label == "demo"


def test_states_file_restores_snapshots_exactly(tmp_path, chain):
    path = save_states(tmp_path / "demo.jsonl", chain.snapshots, "demo")
    snaps = load_states(path)
    assert len(snaps) == len(chain.snapshots)
    for a, b in zip(snaps, chain.snapshots):
        assert np.array_equal(a.x, b.x)
        assert np.array_equal(a.y, b.y)
        assert a.a == b.a


def test_truncated_draws_file_is_rejected(tmp_path, chain):
    path = save_draws(tmp_path / "demo.jsonl", chain)
    lines = path.read_text(encoding="utf-8").splitlines()
    path.write_text("\n".join(lines[:-1]) + "\n", encoding="utf-8")
    with pytest.raises(ContractError):
        load_draws(path)
    with pytest.raises(ContractError):
        load_draws(tmp_path / "missing.jsonl")


def test_run_log_marks_only_latest(tmp_path):
    append_run_log(tmp_path, "aaa", "first")
    append_run_log(tmp_path, "bbb", "second", status="partial")
    data = json.loads((tmp_path / "run_log.json").read_text(encoding="utf-8"))
    assert [r["is_latest"] for r in data["runs"]] == [False, True]
    assert find_latest_run(tmp_path)["run"] == "bbb"
    assert find_latest_run(tmp_path / "none") is None


def test_partial_marker_and_manifest(tmp_path):
    run_dir = prepare_run_dir(tmp_path / "runs" / "abc")
    with pytest.raises(ContractError):
        read_manifest(run_dir)
    write_manifest(run_dir, {"status": "complete"})
    assert read_manifest(run_dir)["status"] == "complete"

    mark_partial(run_dir, ValueError("boom"))
    assert is_partial(run_dir)
    assert (run_dir / "PARTIAL").read_text(encoding="utf-8").startswith("ValueError: boom")
    assert not (prepare_run_dir(run_dir) / "PARTIAL").exists()


def test_latest_run_dir_follows_run_log(tmp_path):
    with pytest.raises(ConfigError):
        latest_run_dir(tmp_path)
    append_run_log(tmp_path, "aaa", "first")
    append_run_log(tmp_path, "bbb", "second")
    assert latest_run_dir(tmp_path) == tmp_path / "runs" / "bbb"


def test_require_complete_refuses_partial_run(tmp_path):
    run_dir = prepare_run_dir(tmp_path / "runs" / "abc")
    assert require_complete(run_dir) == run_dir
    mark_partial(run_dir, ValueError("boom"))
    with pytest.raises(ContractError, match="boom"):
        require_complete(run_dir)


def test_simulated_panel_layout():
    sim = simulate_panel(5, 48, missing_rate=0.3, held_out=2, seed=4)
    assert sim.y.shape == (5, 48)
    assert sim.x.shape == (49, 11)
    assert sim.held_out == ("S04", "S05")
    assert sim.mask[-2:].all()
    assert 0.5 < sim.mask_density < 0.95
    with pytest.raises(ValueError):
        simulate_panel(3, 10, held_out=3)


def test_stopwatch_reports_elapsed_time():
    start_stopwatch("unit")
    assert end_stopwatch("unit") >= 0.0
    assert end_stopwatch("unit") is None
