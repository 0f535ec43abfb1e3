import json
import math

import numpy as np
import pytest

from qfeedback.control import Regime, check_hysteresis
from qfeedback.harness import (
    ConfigError,
    parse_config,
    read_config,
    read_csv,
    reduction_experiment,
    run_ensemble,
    run_trajectory,
    write_config,
    write_outputs,
    write_trajectory,
)
from qfeedback.harness.config import matrix_to_json
from qfeedback.harness.io import _json_safe, read_summary
from qfeedback.harness.runner import SAMPLE_COLUMNS, initial_state

SPIN1 = {"system": {"kind": "spin", "two_J": 2}, "T": 1.0}


def cfg(**kw):
    return parse_config({**SPIN1, **kw})


def test_minimal_config_defaults():
    c = cfg()
    assert (c.eta, c.dt, c.n_trajectories, c.master_seed, c.record_stride, c.converge_eps) == \
        (1.0, 1e-4, 1, 0, 100, 0.01)
    assert c.controller.kind == "zero" and c.initial_state.kind == "maximally_mixed"
    assert (c.target.kind, c.target.m) == ("spin_eigenstate", 2)
    q = parse_config({"system": {"kind": "two_qubit"}, "T": 1.0})
    assert q.target.kind == "two_qubit_antisymmetric" and q.system.N == 4
    assert c.n_steps == 10_000


@pytest.mark.parametrize("data,field", [
    ({**SPIN1, "bogus": 1}, "bogus"),
    ({**SPIN1, "eta": 0.0}, "eta"),
    ({**SPIN1, "eta": 1.5}, "eta"),
    ({**SPIN1, "dt": -1e-3}, "dt"),
    ({**SPIN1, "T": 1e-6}, "T"),
    ({**SPIN1, "n_trajectories": 0}, "n_trajectories"),
    ({**SPIN1, "converge_eps": 1.0}, "converge_eps"),
    ({**SPIN1, "controller": {"kind": "switching", "gamma": 1.2}}, "gamma"),
    ({**SPIN1, "controller": {"kind": "constant"}}, "k"),
    ({**SPIN1, "controller": {"kind": "two_qubit_switching"}}, "controller.kind"),
    ({**SPIN1, "initial_state": {"kind": "eigenstate", "m": 5}}, "initial_state.m"),
    ({**SPIN1, "target": {"kind": "spin_eigenstate", "m": -1}}, "target.m"),
    ({**SPIN1, "initial_state": {"kind": "explicit", "matrix": [[[1, 0], [0, 0]], [[0, 0], [0, 0]]]}}, "matrix"),
    ({"system": {"kind": "spin", "two_J": 0}, "T": 1.0}, "two_J"),
    ({"system": {"kind": "ququart"}, "T": 1.0}, "system.kind"),
    ({"T": 1.0}, "system"),
])
def test_config_rejects(data, field):
    with pytest.raises(ConfigError, match=field):
        parse_config(data)


def test_config_error_names_range():
    with pytest.raises(ConfigError, match=r"\(0.0, 1.0\]"):
        cfg(eta=2.0)


def test_config_round_trip(tmp_path):
    rho = np.diag([0.2, 0.3, 0.5]).astype(complex)
    rho[0, 1] = 0.1j
    rho[1, 0] = -0.1j
    c = cfg(controller={"kind": "switching", "gamma": 0.3}, master_seed=2**63 + 5,
            initial_state={"kind": "explicit", "matrix": matrix_to_json(rho)})
    write_config(c, tmp_path / "c.json")
    assert read_config(tmp_path / "c.json") == c
    assert np.array_equal(initial_state(c, 0), rho)
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ConfigError):
        read_config(tmp_path / "bad.json")


def test_replace():
    c = cfg()
    assert c.replace(dt=1e-3).dt == 1e-3
    with pytest.raises(ConfigError):
        c.replace(dt=0.0)


def test_eigenstate_is_constant_trajectory():
    for m in range(3):
        rec = run_trajectory(cfg(initial_state={"kind": "eigenstate", "m": m}, dt=1e-3))
        assert np.all(rec.samples[:, 1] == rec.samples[0, 1])
        assert rec.converged == (m == 2)
        assert rec.n_switches == 0
        assert np.all(np.diff(rec.samples[:, 0]) > 0)


def test_record_layout():
    rec = run_trajectory(cfg(dt=1e-3, T=0.5, record_stride=10, controller={"kind": "constant", "k": 1.0}))
    assert rec.samples.shape == (51, len(SAMPLE_COLUMNS))
    assert np.allclose(rec.samples[:, 0], np.arange(51) * 1e-2)
    assert np.all(np.isnan(rec.samples[:, 5])) and np.all(rec.samples[:, 4] == 1.0)
    q = run_trajectory(parse_config({"system": {"kind": "two_qubit"}, "T": 0.2, "dt": 1e-3,
                                     "controller": {"kind": "two_qubit_switching"}}))
    assert not np.any(np.isnan(q.samples[:, 4:6]))
    assert np.all(q.samples[:, 6] == Regime.DRIVE)
    assert np.all(q.samples[:, 4:6] == [1.0, 0.0])


def test_determinism_and_streams():
    c = cfg(controller={"kind": "switching"}, initial_state={"kind": "random_pure"}, dt=1e-3, T=2.0)
    a, b = run_trajectory(c, 3), run_trajectory(c, 3)
    assert np.array_equal(a.samples, b.samples, equal_nan=True)
    assert np.array_equal(a.final_rho, b.final_rho)
    assert np.array_equal(a.switch_events, b.switch_events)
    other = run_trajectory(c, 4)
    assert not np.array_equal(a.samples[:, 1], other.samples[:, 1])
    assert not np.array_equal(initial_state(c, 3), initial_state(c, 4))


def test_switching_logs_are_sound():
    c = cfg(controller={"kind": "switching", "gamma": 0.4}, initial_state={"kind": "eigenstate", "m": 0},
            T=10.0, dt=1e-3, n_trajectories=10, converge_eps=0.05)
    for i in range(10):
        rec = run_trajectory(c, i)
        assert check_hysteresis(rec.switch_events, 0.4) == []
        if rec.converged:
            # after the last switch the regime stays feedback
            assert rec.samples[-1, 6] == Regime.FEEDBACK
            last = rec.switch_events[-1] if rec.n_switches else None
            assert last is None or last[2] == Regime.FEEDBACK


def test_event_buffer_grows():
    # near the band edge the log can exceed the initial buffer; the rerun must give the same path
    c = cfg(controller={"kind": "switching", "gamma": 0.98}, initial_state={"kind": "eigenstate", "m": 2},
            T=5.0, dt=1e-3)
    rec = run_trajectory(c, 0)
    assert rec.n_switches == len(rec.switch_events)
    assert check_hysteresis(rec.switch_events, 0.98) == []


def test_failed_trajectory_is_marked():
    c = cfg(controller={"kind": "constant", "k": 1e300}, dt=1e10, T=2e10)
    rec = run_trajectory(c)
    assert rec.failed and not rec.converged
    assert rec.fail_step is not None and "step" in rec.fail_reason
    stats = run_ensemble(c.replace(n_trajectories=2), workers=1)
    assert stats.n_failed == 2 and stats.convergence_fraction == 0.0
    assert len(stats.failures) == 2


def test_single_trajectory_ensemble():
    c = cfg(dt=1e-3)
    s = run_ensemble(c, workers=1)
    rec = run_trajectory(c)
    assert s.n == 1 and s.convergence_fraction == float(rec.converged)
    assert math.isnan(s.convergence_stderr) and math.isnan(s.mean_final_V_stderr)
    assert s.mean_final_V == rec.final_V
    assert np.array_equal(s.mean_fidelity_path[:, 1], rec.samples[:, 1])


def test_reduction_small():
    c = cfg(T=10.0, dt=1e-3, n_trajectories=60, master_seed=4)
    s = reduction_experiment(c, workers=1)
    assert 0 <= s.unresolved_fraction <= 1 and abs(sum(s.collapse_histogram) + s.unresolved_fraction - 1) < 1e-12
    assert s.unresolved_fraction < 0.1
    assert all(0 < h < 0.7 for h in s.collapse_histogram)
    assert abs(s.martingale_drift) < 4 * s.martingale_drift_stderr + 1e-3
    with pytest.raises(ConfigError):
        reduction_experiment(cfg(controller={"kind": "constant", "k": 1.0}))


def test_collapsed_states_are_eigenstates():
    c = cfg(T=15.0, dt=1e-3, initial_state={"kind": "random_pure"})
    for i in range(5):
        rec = run_trajectory(c, i)
        if rec.final_v < 1e-12:
            d = np.real(np.diag(rec.final_rho))
            e = np.zeros((3, 3))
            e[np.argmax(d), np.argmax(d)] = 1
            assert np.linalg.norm(rec.final_rho - e) < 1e-5


def test_thread_count_invariance():
    c = cfg(controller={"kind": "switching"}, initial_state={"kind": "random_pure"}, dt=1e-3, T=1.0,
            n_trajectories=9)
    a = run_ensemble(c, workers=1)
    b = run_ensemble(c, workers=3)
    assert json.dumps(_json_safe(a.to_dict())) == json.dumps(_json_safe(b.to_dict()))
    assert a.trajectories == b.trajectories or all(
        json.dumps(_json_safe(vars(x))) == json.dumps(_json_safe(vars(y))) for x, y in zip(a.trajectories, b.trajectories))
    assert np.array_equal(a.mean_fidelity_path, b.mean_fidelity_path)


def test_csv_round_trip(tmp_path):
    c = cfg(controller={"kind": "switching"}, dt=1e-3, T=1.0, initial_state={"kind": "random_pure"})
    rec = run_trajectory(c, 2)
    write_trajectory(rec, tmp_path)
    header, data = read_csv(tmp_path / "trajectory_2.csv")
    assert tuple(header) == SAMPLE_COLUMNS
    assert np.array_equal(data, rec.samples, equal_nan=True)
    header, ev = read_csv(tmp_path / "switches_2.csv")
    assert np.array_equal(ev, rec.switch_events)
    assert (tmp_path / "trajectory_2.csv").read_text().startswith("t,fidelity,v,trFz,u1,u2,regime\n")


def test_ensemble_outputs(tmp_path):
    c = cfg(dt=1e-3, n_trajectories=3)
    s = run_ensemble(c, workers=1)
    write_outputs(None, s, tmp_path, c)
    summary = read_summary(tmp_path / "summary.json")
    assert summary["n"] == 3 and summary["mean_cross_fidelity"] is None
    assert read_config(tmp_path / "config.json") == c
    header, rows = read_csv(tmp_path / "trajectories.csv")
    assert rows.shape == (3, len(header)) and header[0] == "index"
    header, mean = read_csv(tmp_path / "mean_fidelity.csv")
    assert header == ["t", "mean", "stderr"] and np.array_equal(mean, s.mean_fidelity_path)
