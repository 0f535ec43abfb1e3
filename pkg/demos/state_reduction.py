"""Without control the filter collapses onto a random F_z eigenstate.

Each eigenstate of a spin-1 system is reached with the probability the
initial state assigns to it (a third each from the maximally mixed state),
and the fidelity to any fixed eigenstate is a martingale. The script also
compares a Monte Carlo estimate of the drift of the F_z variance with its
closed form at the maximally mixed state.

    python demos/state_reduction.py --n 300
"""

import argparse

import numpy as np

from qfeedback.analysis import generator_delta_study
from qfeedback.control import fixed_law
from qfeedback.dynamics import spin_system, trajectory_rng
from qfeedback.harness import parse_config, reduction_experiment
from qfeedback.operators import spin_eigenstate


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--n", type=int, default=300)
    ap.add_argument("--T", type=float, default=10.0)
    args = ap.parse_args()

    config = parse_config({"system": {"kind": "spin", "two_J": 2}, "T": args.T, "dt": 1e-4,
                           "n_trajectories": args.n})
    s = reduction_experiment(config)
    se = np.sqrt(1 / 3 * 2 / 3 / s.n)
    print(f"{s.n} trajectories, {1 - s.unresolved_fraction:.1%} resolved")
    for k, h in enumerate(s.collapse_histogram):
        print(f"  eigenvalue {k - 1:+d}: {h:.3f}  (expected 0.333 +- {se:.3f})")
    print(f"fidelity drift {s.martingale_drift:+.2e} per unit time (stderr {s.martingale_drift_stderr:.1e})")

    spec = spin_system(2)
    study = generator_delta_study(spec, fixed_law([0.0], 3), np.eye(3) / 3, 1e-3, 20_000, function="v",
                                  target=spin_eigenstate(2, 2), rng=trajectory_rng(0, 0))
    print(f"\ndrift of the F_z variance at I/3: closed form {study.coarse.analytic:.4f}, "
          f"Monte Carlo {study.coarse.mc_estimate:.4f} +- {study.coarse.mc_stderr:.4f}")


if __name__ == "__main__":
    main()
