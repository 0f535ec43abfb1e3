"""Acceptance criteria at full desk scale.

Each test prints one ``CRITERION n: PASS|FAIL`` line (also repeated in the
terminal summary) before asserting. These runs take about 20 minutes on
one core; deselect them with ``-m "not slow"``.
"""

import filecmp
import time

import numpy as np
import pytest

from qfeedback.analysis import (
    generator_delta_study,
    reachability_check,
    zakai_filter_gap,
)
from qfeedback.control import fixed_law, spin_feedback_law, two_qubit_feedback_law
from qfeedback.dynamics import StepInput, filter_step, spin_system, trajectory_rng, two_qubit_system
from qfeedback.harness import parse_config, reduction_experiment, run_ensemble, write_outputs
from qfeedback.harness.runner import iter_records
from qfeedback.operators import SpinParams, angular_momentum_ops, spin_eigenstate, target_state
from qfeedback.qstate import DensityMatrix, random_density, random_pure

pytestmark = pytest.mark.slow


def _sigma(p, n):
    return np.sqrt(p * (1 - p) / n)


# -- 1: invariants over a million steps ---------------------------------------

def _random_start(n, g):
    kind = g.integers(4)
    if kind == 0:
        return random_density(n, g)
    if kind == 1:
        return random_pure(n, g)
    if kind == 2:
        return random_density(n, g, rank=2)
    rho = np.zeros((n, n), dtype=complex)
    k = g.integers(n)
    rho[k, k] = 1.0
    return DensityMatrix(rho)


def test_criterion_1_state_invariants(criterion):
    systems = [spin_system(tj, eta) for tj in (1, 2, 4) for eta in (0.3, 1.0)]
    systems += [two_qubit_system(eta) for eta in (0.3, 1.0)]
    per = 125_000
    worst = dict(trace=0.0, herm=0.0, eig=0.0)
    errors = 0
    t0 = time.perf_counter()
    for s_idx, spec in enumerate(systems):
        g = trajectory_rng(2024, s_idx)
        dts = 10.0 ** g.uniform(-5, -2, per)
        dws = np.sqrt(dts) * g.standard_normal(per)
        us = g.uniform(-5, 5, (per, spec.n_controls))
        restart = g.random(per) < 0.05
        out = np.empty((per, spec.N, spec.N), dtype=complex)
        rho = _random_start(spec.N, g)
        for k in range(per):
            if restart[k]:
                rho = _random_start(spec.N, g)
            try:
                rho = filter_step(spec, StepInput(rho, us[k], dws[k], dts[k]))
            except (FloatingPointError, ValueError):
                errors += 1
                rho = _random_start(spec.N, g)
                out[k] = rho.matrix
                continue
            out[k] = rho.matrix
        worst["trace"] = max(worst["trace"], np.abs(np.trace(out, axis1=1, axis2=2) - 1).max())
        worst["herm"] = max(worst["herm"], np.linalg.norm(out - out.conj().transpose(0, 2, 1), axis=(1, 2)).max())
        herm = 0.5 * (out + out.conj().transpose(0, 2, 1))
        worst["eig"] = min(worst["eig"], np.linalg.eigvalsh(herm).min())
    elapsed = time.perf_counter() - t0
    ok = (errors == 0 and worst["trace"] <= 1e-9 and worst["herm"] <= 1e-9
          and worst["eig"] >= -1e-8 and elapsed <= 120)
    criterion(1, ok, f"{per * len(systems)} steps, max|tr-1|={worst['trace']:.1e}, "
                     f"max herm={worst['herm']:.1e}, min eig={worst['eig']:.1e}, "
                     f"step errors={errors}, {elapsed:.0f}s (limit 120s)")
    assert ok


# -- 2: linear vs nonlinear filter ----------------------------------------------

def test_criterion_2_zakai_consistency(criterion):
    spec = spin_system(2)
    law = fixed_law([1.0], spec.N)
    rho0 = np.eye(3, dtype=complex) / 3
    T, dts = 5.0, (1e-3, 5e-4, 2.5e-4)
    n_fine = int(round(T / dts[-1]))
    gaps = {dt: [] for dt in dts}
    for i in range(50):
        dw = np.sqrt(dts[-1]) * trajectory_rng(7, i).standard_normal(n_fine)
        for dt in dts:
            k = int(round(dt / dts[-1]))
            gaps[dt].append(zakai_filter_gap(spec, law, rho0, dw.reshape(-1, k).sum(axis=1), dt))
    means = [np.mean(gaps[dt]) for dt in dts]
    ratios = [means[0] / means[1], means[1] / means[2]]
    ok = all(1.4 <= r <= 2.6 for r in ratios)
    criterion(2, ok, f"mean max gap {[f'{m:.4f}' for m in means]}, halving ratios "
                     f"{[f'{r:.3f}' for r in ratios]} (need 2 +- 30%)")
    assert ok


# -- 3: state reduction -------------------------------------------------------

def test_criterion_3_state_reduction(criterion):
    config = parse_config({"system": {"kind": "spin", "two_J": 2}, "controller": {"kind": "zero"},
                           "initial_state": {"kind": "maximally_mixed"}, "T": 10.0, "dt": 1e-4,
                           "n_trajectories": 2000, "master_seed": 3, "converge_eps": 0.01})
    t0 = time.perf_counter()
    s = reduction_experiment(config)
    elapsed = time.perf_counter() - t0
    n = s.n
    resolved = 1.0 - s.unresolved_fraction
    band = 3 * _sigma(1 / 3, n)
    hist_ok = all(abs(h - 1 / 3) <= band for h in s.collapse_histogram)
    drift_ok = abs(s.martingale_drift) <= 3 * s.martingale_drift_stderr
    ok = resolved >= 0.99 and hist_ok and drift_ok and s.n_failed == 0 and elapsed <= 600
    criterion(3, ok, f"resolved={resolved:.4f}, histogram={[round(h, 4) for h in s.collapse_histogram]} "
                     f"(1/3 +- {band:.4f}), drift={s.martingale_drift:.2e} +- 3*{s.martingale_drift_stderr:.1e}, "
                     f"{elapsed:.0f}s")
    assert ok


# -- 4: generator closed forms --------------------------------------------------

def _generator_cases():
    # 20 full-rank random states per closed form
    cases = []
    for name in ("v", "V", "VV", "VV-two-qubit"):
        for i in range(20):
            g = trajectory_rng(123, i, 10 + len(cases) // 20)
            if name == "VV-two-qubit":
                spec = two_qubit_system()
                target = target_state("two_qubit_antisymmetric" if i % 2 else "two_qubit_symmetric")
                law, fn = two_qubit_feedback_law(target), "VV"
            else:
                two_j = (1, 2, 3, 4)[i % 4]
                spec = spin_system(two_j, eta=1.0 if i % 2 else 0.5)
                target = spin_eigenstate(two_j, int(g.integers(two_j + 1)))
                law = fixed_law([0.0], spec.N) if name == "v" else spin_feedback_law(target)
                fn = name
            cases.append((name, spec, law, fn, target, np.array(random_density(spec.N, g).matrix), g))
    spec = spin_system(2)
    target = spin_eigenstate(2, 2)
    cases.append(("v at I/3", spec, fixed_law([0.0], 3), "v", target, np.eye(3, dtype=complex) / 3,
                  trajectory_rng(123, 99, 10)))
    return cases


def test_criterion_4_generators(criterion):
    t0 = time.perf_counter()
    failures, worst = [], {}
    point = None
    for name, spec, law, fn, target, rho, g in _generator_cases():
        st = generator_delta_study(spec, law, rho, 1e-3, 100_000, function=fn, target=target, rng=g)
        ratio = st.coarse.error / st.tolerance
        worst[name] = max(worst.get(name, 0.0), ratio)
        if name == "v at I/3":
            point = (st.coarse.analytic, st.coarse.mc_estimate)
        if not st.passed:
            failures.append((name, st.coarse.analytic, st.coarse.mc_estimate, st.tolerance))
    elapsed = time.perf_counter() - t0
    point_ok = abs(point[0] + 16 / 9) < 1e-12
    ok = not failures and point_ok and elapsed <= 600
    criterion(4, ok, f"81 checks, failures={len(failures)}, worst |mc-analytic|/tol per form "
                     f"{ {k: round(v, 2) for k, v in worst.items()} }, Av(I/3)={point[0]:.6f} "
                     f"(mc {point[1]:.4f}), {elapsed:.0f}s")
    for f in failures:
        print("  failed:", f)
    assert ok


# -- 5: spin stabilization ------------------------------------------------------

def _decaying(survival):
    # survival[k] = fraction with >= k exits, k up to the observed maximum:
    # non-increasing, and strictly decreasing while at least 5% remain
    s = np.asarray(survival)
    head = s[s >= 0.05]
    return bool(np.all(np.diff(s) <= 0) and np.all(np.diff(head) < 0))


def test_criterion_5_spin_stabilization(criterion):
    t0 = time.perf_counter()
    rows, ok = [], True
    for two_j in (2, 4):
        for init in ({"kind": "maximally_mixed"}, {"kind": "eigenstate", "m": 0}, {"kind": "random_pure"}):
            config = parse_config({"system": {"kind": "spin", "two_J": two_j}, "eta": 1.0,
                                   "controller": {"kind": "switching", "gamma": 0.4},
                                   "target": {"kind": "spin_eigenstate", "m": two_j},
                                   "initial_state": init, "T": 20.0, "dt": 1e-4,
                                   "n_trajectories": 500, "master_seed": 5, "converge_eps": 0.05})
            s = run_ensemble(config)
            good = (s.convergence_fraction >= 0.95 and s.mean_final_V <= 0.05
                    and np.isfinite(s.max_switch_count) and _decaying(s.exit_survival) and s.n_failed == 0)
            ok &= good
            rows.append(f"2J={two_j} {init['kind']}: conv={s.convergence_fraction:.3f} "
                        f"meanV={s.mean_final_V:.4f} max_switches={s.max_switch_count} "
                        f"exit tail {[round(x, 3) for x in s.exit_survival[:5]]}"
                        f"{'' if good else ' <-'}")
    elapsed = time.perf_counter() - t0
    ok &= elapsed <= 1200
    criterion(5, ok, "; ".join(rows) + f"; {elapsed:.0f}s")
    assert ok


# -- 6: exit bound under pure feedback -----------------------------------------

def test_criterion_6_exit_bound(criterion):
    gamma = 0.4
    psi = np.zeros(3)
    psi[2], psi[0] = np.sqrt(gamma), np.sqrt(1 - gamma)
    rho = np.outer(psi, psi)
    config = parse_config({"system": {"kind": "spin", "two_J": 2},
                           "controller": {"kind": "feedback", "gamma": gamma},
                           "initial_state": {"kind": "explicit",
                                             "matrix": [[[x, 0.0] for x in r] for r in rho.tolist()]},
                           "T": 20.0, "dt": 1e-4, "n_trajectories": 500, "master_seed": 6})
    s = run_ensemble(config)
    bound = (1 - gamma) / (1 - gamma / 2)
    limit = bound + 3 * _sigma(bound, s.n)
    ok = s.band_exit_fraction <= limit and s.n_failed == 0
    criterion(6, ok, f"fraction reaching fidelity <= gamma/2: {s.band_exit_fraction:.3f} "
                     f"(bound {bound:.3f} + 3 sigma = {limit:.3f})")
    assert ok


# -- 7: two-qubit stabilization -----------------------------------------------

def test_criterion_7_two_qubit(criterion):
    rows, ok = [], True
    for kind in ("two_qubit_antisymmetric", "two_qubit_symmetric"):
        config = parse_config({"system": {"kind": "two_qubit"}, "eta": 1.0, "target": {"kind": kind},
                               "controller": {"kind": "two_qubit_switching", "gamma": 0.4},
                               "initial_state": {"kind": "maximally_mixed"}, "T": 20.0, "dt": 1e-4,
                               "n_trajectories": 500, "master_seed": 7, "converge_eps": 0.05})
        s = run_ensemble(config)
        good = s.convergence_fraction >= 0.95 and s.mean_cross_fidelity <= 0.05 and s.n_failed == 0
        ok &= good
        rows.append(f"{kind}: conv={s.convergence_fraction:.3f} cross={s.mean_cross_fidelity:.2e}")
    criterion(7, ok, "; ".join(rows))
    assert ok


# -- 8: spectral facts -----------------------------------------------------------

def test_criterion_8_reachability(criterion):
    t0 = time.perf_counter()
    r = reachability_check("two_qubit", 2.0)
    ev = np.round(r.eigenvalues, 4)
    published = np.array([1j, -1j, -0.1270, -7.8730])
    spectrum_ok = all(np.any(np.abs(ev - z) < 1e-12) for z in published) and r.passed
    spins = {}
    for two_j in (1, 2, 3, 4):
        spins[two_j] = next((k for k in (1.0, 2.0, 4.0, 8.0) if reachability_check(two_j, k).passed), None)
        fy, fz = angular_momentum_ops(SpinParams(two_j))
        d = np.diag(fz).real
        assert np.all(np.diff(d) == 1.0)
        assert np.all(np.diag(fy, 1) != 0) and np.all(np.diag(fy, -1) != 0)
    elapsed = time.perf_counter() - t0
    ok = spectrum_ok and all(k is not None for k in spins.values()) and elapsed <= 1.0
    criterion(8, ok, f"two-qubit spectrum {sorted(ev.tolist(), key=lambda z: (z.real, z.imag))}, "
                     f"passing kappa per 2J {spins}, {elapsed:.2f}s")
    assert ok


# -- 9: determinism across thread counts --------------------------------------

def test_criterion_9_determinism(criterion, tmp_path):
    config = parse_config({"system": {"kind": "spin", "two_J": 2},
                           "controller": {"kind": "switching", "gamma": 0.4},
                           "initial_state": {"kind": "random_pure"}, "T": 2.0, "dt": 1e-3,
                           "record_stride": 10, "n_trajectories": 24, "master_seed": 9})
    dirs = []
    for workers in (1, 4, 8):
        out = tmp_path / f"w{workers}"
        records = list(iter_records(config, workers=workers, chunk=5))
        write_outputs(records, run_ensemble(config, workers=workers), out, config)
        dirs.append(out)
    names = sorted(p.name for p in dirs[0].iterdir())
    same = all(sorted(p.name for p in d.iterdir()) == names for d in dirs[1:])
    mismatch = filecmp.cmpfiles(dirs[0], dirs[1], names, shallow=False)[1] + \
        filecmp.cmpfiles(dirs[0], dirs[2], names, shallow=False)[1]
    ok = same and not mismatch and len(names) > 4
    criterion(9, ok, f"{len(names)} files compared across 1/4/8 workers, mismatches={sorted(set(mismatch))}")
    assert ok
