"""Acceptance criteria 1-9 at desk scale.

Each test records one ``CRITERION n: PASS/FAIL`` line with the measured
numbers; the lines are printed at the end of the pytest run (see
``conftest.py``) or directly when this file is executed as a script.
Runtime on one core is roughly ten minutes, most of it in criterion 2.
"""

import json
import math
import sys
from dataclasses import asdict

import numpy as np
import pytest

from condbohm.cli import parse_config, run
from condbohm.conditional import ConditionalAnalyzer, gamma_field, quantum_potential
from condbohm.dynamics import (
    Flow, StateFields, classical_trajectory, conditional_classical_trajectory, integrate_trajectory,
)
from condbohm.experiments import (
    ExperimentConfig, run_classicality, run_equivariance, run_residuals, run_velocity_comparison,
)
from condbohm.stationary import (
    ANALYTIC_SCENARIOS, HARMONIC2D, SCENARIOS, PotentialSpec, build_scenario, vortex_oscillator,
)

pytestmark = pytest.mark.slow

RESULTS: dict = {}
TWO_PI = 2 * math.pi


def record(number: int, title: str, checks: dict, details: dict):
    """Store the verdict of one criterion and fail the test if any check failed."""
    ok = all(checks.values())
    failed = [k for k, v in checks.items() if not v]
    info = ", ".join(f"{k}={_fmt(v)}" for k, v in details.items())
    line = f"CRITERION {number}: {'PASS' if ok else 'FAIL'} - {title} [{info}]"
    if failed:
        line += f" failed: {', '.join(failed)}"
    RESULTS[number] = line
    print(line)
    assert ok, line


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.3g}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return str(v)


# --- 1 ----------------------------------------------------------------------------------------

def test_criterion_1_eigenstate_fidelity():
    residuals = {name: build_scenario(name)[1].residual for name in SCENARIOS}
    checks = {f"residual[{name}]": residuals[name] < (1e-8 if name in ANALYTIC_SCENARIOS else 1e-6)
              for name in SCENARIOS}
    errors = [abs(vortex_oscillator(n=n)[1].E - 2.0) / 2.0 for n in (129, 257, 513)]
    default_error = abs(vortex_oscillator()[1].E - 2.0) / 2.0
    factors = [a / b for a, b in zip(errors, errors[1:])]
    checks["vortex E within 1e-3"] = default_error < 1e-3
    checks["4x per refinement"] = all(3.6 <= f <= 4.4 for f in factors)
    record(1, "eigenstate fidelity", checks,
           dict(residuals=list(residuals.values()), E_rel_error=default_error, factors=factors))


# --- 2 ----------------------------------------------------------------------------------------

def test_criterion_2_equivariance():
    cfg = ExperimentConfig(scenario="vortex_oscillator", velocity_models=("bohmian", "scaling", "stream"),
                           lambda_sweep=(-1.0, 0.5, 2.0), n_ensemble=10_000, n_reseeds=20,
                           t_final=TWO_PI, dt=1e-3, dt_slice=0.02)
    res = run_equivariance(cfg)
    final = {k: float(v[-1]) for k, v in res.tv.items()}
    checks = {f"TV[{k}] <= bound": v <= res.bound for k, v in final.items()}
    checks["five models"] = len(final) == 5
    record(2, "equivariance of every velocity law", checks, dict(bound=res.bound, **final))


# --- 3 ----------------------------------------------------------------------------------------

def test_criterion_3_pseudo_schrodinger_identity():
    cfg = ExperimentConfig(scenario="vortex_oscillator", grid=(129, 129), x0=(1.0, 0.0), t_final=TWO_PI,
                           dt=1e-3, dt_slice=0.02, scenario_params={"half_width": 6.0})
    r = run_residuals(cfg, levels=3)
    order = r.report.r_exact_order
    nog = r.r_no_gamma_levels
    checks = {
        "order >= 1.8": order >= 1.8,
        # without Gamma the residual stalls: it neither converges nor drops below O(1)
        "ablation plateaus": min(nog) > 0.5 * max(nog) and nog[-1] > 100 * r.r_levels[-1],
    }
    record(3, "exact pseudo-Schrodinger identity", checks,
           dict(order=order, r_levels=r.r_levels, no_gamma_levels=nog))


# --- 4 and 5 ------------------------------------------------------------------------------------

SWEEP = (0.0, 0.01, -0.01, 0.25, -0.25, 0.5, -0.5, -1.0, 2.0)


@pytest.fixture(scope="module")
def coupled_comparison():
    cfg = ExperimentConfig(scenario="coupled_ring_env", velocity_models=("bohmian", "scaling"),
                           lambda_sweep=SWEEP, t_final=TWO_PI, dt=1e-3, dt_slice=0.02,
                           scenario_params={"k": 20, "m2": 50.0, "epsilon": 0.1})
    return run_velocity_comparison(cfg)


def test_criterion_4_conditional_schrodinger(coupled_comparison):
    b = coupled_comparison.summary("bohmian")
    checks = {
        "r(t) < 1e-2": b.r_cond_worst < 1e-2,
        "deviation(2pi) < 5e-2": b.deviation_end_worst < 5e-2,
        "reaches 2pi": abs(b.times[-1] - TWO_PI) < 1e-9,
    }
    record(4, "conditional Schrodinger approximation (coupled ring)", checks,
           dict(r_max=b.r_cond_worst, deviation_2pi=b.deviation_end_worst))


def test_criterion_5_velocity_discrimination(coupled_comparison):
    ratio = {lam: coupled_comparison.summary(f"scaling({lam:g})").ratio_max for lam in SWEEP}
    by_size = {}
    for lam in (0.0, 0.25, -0.25, 0.5, -0.5, -1.0, 2.0):
        by_size.setdefault(abs(lam), []).append(ratio[lam])
    means = [float(np.mean(by_size[a])) for a in sorted(by_size)]
    checks = {
        "lambda=-1 ratio >= 10": ratio[-1.0] >= 10,
        "lambda=+0.01 ratio <= 1.5": ratio[0.01] <= 1.5,
        "lambda=-0.01 ratio <= 1.5": ratio[-0.01] <= 1.5,
        "non-decreasing in |lambda|": all(b >= a for a, b in zip(means, means[1:])),
    }
    record(5, "velocity discrimination", checks, {f"ratio({lam:g})": ratio[lam] for lam in SWEEP})


# --- 6 ----------------------------------------------------------------------------------------

def test_criterion_6_classical_limit():
    ring = run_classicality(ExperimentConfig(scenario="ring_planewave_env", t_final=TWO_PI, dt=1e-3,
                                             dt_slice=0.02, n_trajectories=4))["bohmian"]
    vortex = run_classicality(ExperimentConfig(scenario="vortex_oscillator", t_final=TWO_PI, dt=1e-3,
                                               dt_slice=0.02, n_trajectories=4))["bohmian"]
    checks = {
        "ring v2 spread < 1e-8": ring["v2_spread"] < 1e-8,
        "ring Gamma flatness < 1e-8": ring["gamma_flatness"] < 1e-8,
        "ring X2 gap < 1e-6": ring["trajectory_gap"] < 1e-6,
        "vortex non-classical": vortex["ratio"] < 10 and not vortex["classical"],
    }
    record(6, "classical-limit diagnostics", checks,
           dict(ring_spread=ring["v2_spread"], ring_flatness=ring["gamma_flatness"],
                ring_gap=ring["trajectory_gap"], ring_ratio=ring["ratio"], vortex_ratio=vortex["ratio"]))


# --- 7 ----------------------------------------------------------------------------------------

def test_criterion_7_conditional_classical_mechanics():
    pot = PotentialSpec(HARMONIC2D, omega1=1.0, omega2=1.6, coupling=0.4)
    full = classical_trajectory(pot, (0.5, -1.0), (0.2, 0.8), (0.0, TWO_PI), 1e-3)
    cond = conditional_classical_trajectory(pot, full, 0.5, 0.2, (0.0, TWO_PI), 1e-3)
    err = float(np.max(np.abs(cond.positions[:, 0] - full.positions[:, 0])))
    record(7, "conditional classical mechanics", {"sup-norm < 1e-5": err < 1e-5}, dict(sup_error=err))


# --- 8 ----------------------------------------------------------------------------------------

def test_criterion_8_trivial_suite():
    pot, state = build_scenario("frozen_ground")
    fields = StateFields(state, pot.masses)
    grid = state.psi.grid
    X1, X2 = grid.mesh()
    R = np.abs(state.psi.values)
    inside = (R > 1e-3 * R.max()).ravel()
    pts = np.column_stack([X1.ravel(), X2.ravel()])[inside]
    speed = float(np.max(np.abs(Flow(fields)(pts))))

    analyzer = ConditionalAnalyzer(pot, state)
    tr = integrate_trajectory(Flow(fields), (0.4, -0.3), (0.0, TWO_PI), 1e-3)
    moved = float(np.max(np.abs(tr.positions - tr.positions[0])))
    times = np.linspace(0.0, TWO_PI, 64)
    s = analyzer.along(tr, times)
    drift = float(np.max(np.abs(s.psi - s.psi[:1])))
    _, _, _, singular = gamma_field(s)

    Q1 = quantum_potential(R.T, pot.m1, grid.axis1).T
    Q2 = quantum_potential(R, pot.m2, grid.axis2)
    V = pot.on_grid(grid)
    inner = (slice(1, -1), slice(1, -1))
    ok = R[inner] > 1e-3 * R.max()
    q_err = float(np.max(np.abs(Q1 + Q2 - (state.E - V))[inner][ok]))
    dx = grid.axis1.dx
    checks = {
        "v == 0": speed == 0.0,
        "static trajectory": moved == 0.0,
        "psi_c time-independent": drift < 1e-14,
        # the discrete eigen-equation is exact; E differs from the continuum by O(dx^2)
        "Q = E - V": q_err < 1e-8 and abs(state.E - 1.0) < dx ** 2,
        "Gamma singular-flagged": bool(singular.all()),
    }
    record(8, "trivial suite (frozen ground state)", checks,
           dict(max_speed=speed, max_move=moved, psi_c_drift=drift, q_error=q_err, E=state.E))


# --- 9 ----------------------------------------------------------------------------------------

def test_criterion_9_determinism(tmp_path):
    from pathlib import Path

    config = parse_config(Path(__file__).resolve().parents[1] / "scripts" / "configs" / "smoke.ini")
    identical = {}
    for sub in ("equivariance", "classicality", "compare", "residuals"):
        first = tmp_path / sub / "first"
        assert run(sub, config, first) == 0
        manifest = json.loads((first / "manifest.json").read_text())
        # the rerun is configured only from what the manifest recorded
        snap = manifest["config"]
        rerun_cfg = ExperimentConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in snap.items()})
        assert asdict(rerun_cfg) == asdict(config)
        second = tmp_path / sub / "second"
        assert run(sub, rerun_cfg, second) == 0
        identical[sub] = all((first / f["path"]).read_bytes() == (second / f["path"]).read_bytes()
                             for f in manifest["files"])
    record(9, "byte-identical reruns", {f"{k} identical": v for k, v in identical.items()}, identical)


if __name__ == "__main__":
    code = pytest.main([__file__, "-q", "-p", "no:cacheprovider"])
    print("\n".join(RESULTS[k] for k in sorted(RESULTS)))
    sys.exit(code)
