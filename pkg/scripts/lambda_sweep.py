"""Print the velocity-discrimination table for the scaling family.

Usage: python3 scripts/lambda_sweep.py [--trajectories N] [--lambdas 0,0.01,-1,...]

Each row is a model; ``ratio_max`` is its running-max deviation from the
conditional Schrodinger reference, relative to the Bohmian baseline.
"""

import argparse
import math

from condbohm.experiments import ExperimentConfig, run_velocity_comparison


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--trajectories", type=int, default=8)
    p.add_argument("--lambdas", default="0,0.01,-0.01,0.25,-0.25,0.5,-0.5,-1,2")
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)
    lambdas = tuple(float(x) for x in args.lambdas.split(","))
    cfg = ExperimentConfig(scenario="coupled_ring_env", velocity_models=("bohmian", "scaling"),
                           lambda_sweep=lambdas, n_trajectories=args.trajectories, seed=args.seed,
                           t_final=2 * math.pi, dt=1e-3, dt_slice=0.02)
    rep = run_velocity_comparison(cfg, log=print)
    print(f"{'model':>16} {'ratio_max':>10} {'ratio_end':>10} {'max r_cond':>11} singular")
    for m in rep.models:
        print(f"{m.label:>16} {m.ratio_max:10.3f} {m.ratio_end:10.3f} {m.r_cond_worst:11.3e} {m.singular_gamma}")


if __name__ == "__main__":
    main()
