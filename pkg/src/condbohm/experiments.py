"""Experiments: equivariance of every velocity law versus the conditional
Schrodinger approximation, which only the Bohmian law supports."""

from __future__ import annotations

import csv
import inspect
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from condbohm.conditional import (
    Classicality, ConditionalAnalyzer, ResidualReport, _clean, build_tilde,
    classicality_metrics, cond_schrodinger_residual, convergence_order, l2_norm,
    propagate_reference, pseudo_schrodinger_residual,
)
from condbohm.dynamics import (
    BOHMIAN, SCALING, STREAM, NODE_GUARD, Flow, StateFields, Trajectory, VelocityModel,
    classical_trajectory, default_stream_function, integrate_trajectory, propagate,
    sample_ensemble,
)

from condbohm.stationary import SCENARIOS, build_scenario

MODEL_KINDS = (BOHMIAN, SCALING, STREAM)

# Independent random streams derived from the one configured seed.
STREAM_ENSEMBLE = 0
STREAM_BOOTSTRAP = 1
STREAM_TRAJECTORIES = 1000


class ConfigError(ValueError):
    """Invalid experiment configuration; ``key`` names the offending field."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass
class ExperimentConfig:
    scenario: str = "vortex_oscillator"
    velocity_models: tuple = (BOHMIAN,)
    lambda_sweep: tuple = (0.0, 0.25, -0.25, 0.5, -0.5, -1.0, 2.0)
    stream_lambda: float = 1.0
    stream_width: float = 0.5
    n_ensemble: int = 10_000
    n_trajectories: int = 8
    n_reseeds: int = 20
    n_bins: int = 24
    n_checkpoints: int = 8
    t_final: float = 2 * math.pi
    dt: float = 1e-3
    dt_slice: float | None = None
    grid: tuple | None = None
    x0: tuple | None = None
    seed: int = 0
    output_dir: str = "results"
    scenario_params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.velocity_models = tuple(self.velocity_models)
        self.lambda_sweep = tuple(float(x) for x in self.lambda_sweep)
        if self.scenario not in SCENARIOS:
            raise ConfigError("scenario", f"unknown scenario {self.scenario!r}; choose from {SCENARIOS}")
        for m in self.velocity_models:
            if m not in MODEL_KINDS:
                raise ConfigError("velocity_models", f"unknown model {m!r}; choose from {MODEL_KINDS}")
        if not self.velocity_models:
            raise ConfigError("velocity_models", "at least one model is required")
        if not (self.t_final > 0 and math.isfinite(self.t_final)):
            raise ConfigError("t_final", "must be a positive finite time")
        if not self.dt > 0:
            raise ConfigError("dt", "must be positive")
        if self.dt_slice is None:
            self.dt_slice = 20 * self.dt
        ratio = self.dt_slice / self.dt
        if self.dt_slice <= 0 or abs(ratio - round(ratio)) > 1e-9 * ratio:
            raise ConfigError("dt_slice", "must be a positive multiple of dt")
        for key in ("n_ensemble", "n_trajectories", "n_reseeds", "n_bins", "n_checkpoints"):
            if int(getattr(self, key)) < 1:
                raise ConfigError(key, "must be >= 1")
        if self.grid is not None:
            self.grid = tuple(int(n) for n in self.grid)
            if len(self.grid) != 2 or min(self.grid) < 8:
                raise ConfigError("grid", "expects two sizes >= 8")
        if self.x0 is not None:
            self.x0 = tuple(float(x) for x in self.x0)
            if len(self.x0) != 2:
                raise ConfigError("x0", "expects two coordinates")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed", "must fit in an unsigned 64-bit integer")
        builder_params = _builder_parameters(self.scenario)
        for key in self.scenario_params:
            if key not in builder_params:
                raise ConfigError(f"scenario.{key}", f"not a parameter of {self.scenario}")

    @property
    def slice_stride(self) -> int:
        return int(round(self.dt_slice / self.dt))

    @property
    def n_slices(self) -> int:
        return max(2, math.ceil(self.t_final / self.dt_slice - 1e-9))

    @property
    def slice_step(self) -> float:
        """``dt_slice`` shortened so that ``t_final`` is a whole number of slices."""
        return self.t_final / self.n_slices

    @property
    def step(self) -> float:
        """Integrator step actually used (``<= dt``), ``slice_stride`` steps per slice."""
        return self.slice_step / self.slice_stride

    def snapshot(self) -> dict:
        return _clean(asdict(self))


def _builder_parameters(name: str) -> set:
    import condbohm.stationary as st

    return set(inspect.signature(getattr(st, name)).parameters)


# ---------------------------------------------------------------------------
# scenario and model plumbing
# ---------------------------------------------------------------------------


def scenario_params(config: ExperimentConfig, level: int = 0) -> dict:
    """Builder keyword arguments, with grid sizes refined ``level`` times."""
    params = dict(config.scenario_params)
    names = _builder_parameters(config.scenario)
    if config.grid is not None:
        if "n" in names:
            if config.grid[0] != config.grid[1]:
                raise ConfigError("grid", f"{config.scenario} needs a square grid")
            params["n"] = config.grid[0]
        else:
            params["n1"], params["n2"] = config.grid
    if level:
        pot, state = build_scenario(config.scenario, **params)
        g = state.psi.grid
        for _ in range(level):
            g = g.refined()
        if "n" in names:
            params["n"] = g.axis1.n_points
        else:
            params["n1"], params["n2"] = g.shape
    return params


def load_scenario(config: ExperimentConfig, level: int = 0):
    return build_scenario(config.scenario, **scenario_params(config, level))


@dataclass(frozen=True)
class ModelSpec:
    label: str
    kind: str
    lam: float


def model_specs(config: ExperimentConfig, include_baseline: bool = False) -> list[ModelSpec]:
    """Expand the configured model kinds; ``scaling`` runs once per swept lambda."""
    out: list[ModelSpec] = []
    kinds = list(config.velocity_models)
    if include_baseline and BOHMIAN not in kinds:
        kinds.insert(0, BOHMIAN)
    for kind in kinds:
        if kind == BOHMIAN:
            out.append(ModelSpec(BOHMIAN, BOHMIAN, 0.0))
        elif kind == SCALING:
            for lam in config.lambda_sweep:
                out.append(ModelSpec(f"scaling({lam:g})", SCALING, lam))
        else:
            out.append(ModelSpec(f"stream({config.stream_lambda:g})", STREAM, config.stream_lambda))
    seen, unique = set(), []
    for m in out:
        if m.label not in seen:
            seen.add(m.label)
            unique.append(m)
    return unique


def make_model(spec: ModelSpec, fields: StateFields, config: ExperimentConfig) -> VelocityModel:
    if spec.kind == BOHMIAN:
        return VelocityModel.bohmian()
    if spec.kind == SCALING:
        return VelocityModel.scaling(spec.lam)
    return VelocityModel.stream(default_stream_function(fields, config.stream_width), spec.lam)


def _flow_kwargs(fields: StateFields) -> dict:
    return dict(eps_node=fields.eps_node, guard=NODE_GUARD * fields.max_amplitude)


# ---------------------------------------------------------------------------
# equivariance
# ---------------------------------------------------------------------------


class Histogrammer:
    """Binned comparison of point sets with ``|psi|^2`` on the grid domain."""

    def __init__(self, fields: StateFields, n_bins: int = 24, sub: int = 8):
        g = fields.grid
        self.grid = g
        self.edges = [np.linspace(a.x_min, a.x_max, n_bins + 1) for a in (g.axis1, g.axis2)]
        # midpoint rule with sub x sub points per bin on the interpolated density
        mids = []
        for e in self.edges:
            w = e[1] - e[0]
            mids.append((e[0] + w * (np.arange(n_bins * sub) + 0.5) / sub))
        X1, X2 = np.meshgrid(mids[0], mids[1], indexing="ij")
        dens = np.abs(fields.interp.at(X1.ravel(), X2.ravel())[0]) ** 2
        p = dens.reshape(n_bins, sub, n_bins, sub).sum(axis=(1, 3))
        self.p = p / p.sum()

    def wrap(self, points: np.ndarray) -> np.ndarray:
        pts = np.array(points, dtype=float, copy=True)
        for k, a in enumerate((self.grid.axis1, self.grid.axis2)):
            if a.periodic:
                pts[:, k] = a.x_min + np.mod(pts[:, k] - a.x_min, a.length)
        return pts

    def tv(self, points: np.ndarray) -> float:
        pts = self.wrap(points)
        h, _, _ = np.histogram2d(pts[:, 0], pts[:, 1], bins=self.edges)
        return 0.5 * float(np.abs(h / len(pts) - self.p).sum())


@dataclass
class EquivarianceResult:
    times: np.ndarray
    tv: dict
    bootstrap_mean: float
    bootstrap_std: float
    captured: dict

    @property
    def bound(self) -> float:
        return self.bootstrap_mean + 3.0 * self.bootstrap_std

    def passed(self) -> dict:
        return {k: bool(v[-1] <= self.bound) for k, v in self.tv.items()}

    def to_dict(self) -> dict:
        return _clean({"times": self.times, "tv": self.tv, "bootstrap_mean": self.bootstrap_mean,
                       "bootstrap_std": self.bootstrap_std, "bound": self.bound,
                       "captured": self.captured, "passed": self.passed()})


def run_equivariance(config: ExperimentConfig, scenario=None, log=None) -> EquivarianceResult:
    """Propagate a ``|psi|^2`` ensemble under each model and track the binned TV distance.

    The t=0 reference is the TV distance of ``n_reseeds`` independent fresh
    samples (mean and standard deviation).
    """
    pot, state = scenario if scenario is not None else load_scenario(config)
    fields = StateFields(state, pot.masses)
    hist = Histogrammer(fields, config.n_bins)
    boot = np.array([hist.tv(sample_ensemble(fields, config.n_ensemble, config.seed,
                                             stream=STREAM_BOOTSTRAP + r))
                     for r in range(config.n_reseeds)])
    X0 = sample_ensemble(fields, config.n_ensemble, config.seed, stream=STREAM_ENSEMBLE)
    n_steps = config.n_slices * config.slice_stride
    every = max(1, n_steps // config.n_checkpoints)
    tv, captured, times = {}, {}, None
    for spec in model_specs(config):
        flow = Flow(fields, make_model(spec, fields, config))
        t, pos, _, cap = propagate(flow, X0, (0.0, config.t_final), config.step,
                                   amplitude=flow.amplitude, record_every=every, **_flow_kwargs(fields))
        times = t
        tv[spec.label] = np.array([hist.tv(p) for p in pos])
        captured[spec.label] = int(np.sum(np.isfinite(cap)))
        if log:
            log(f"equivariance {spec.label}: TV(t_final)={tv[spec.label][-1]:.4f}")
    return EquivarianceResult(times, tv, float(boot.mean()), float(boot.std(ddof=1)), captured)


# ---------------------------------------------------------------------------
# trajectories and conditional analysis
# ---------------------------------------------------------------------------


def initial_points(config: ExperimentConfig, fields: StateFields) -> np.ndarray:
    if config.x0 is not None:
        return np.array([config.x0], dtype=float)
    return sample_ensemble(fields, config.n_trajectories, config.seed, stream=STREAM_TRAJECTORIES)


def slice_times(config: ExperimentConfig) -> np.ndarray:
    times = config.slice_step * np.arange(config.n_slices + 1)
    times[-1] = config.t_final
    return times


def environment_classical(pot, analyzer: ConditionalAnalyzer, fields: StateFields, X0, t_end, dt):
    """Classical run matched to the Bohmian environment state at ``X0``.

    ``X2(0)`` and ``P2 = m2 v2(X0)`` come from the wave function; particle 1
    starts at rest at the minimum of ``V(., X2(0))``.
    """
    v = Flow(fields)(np.asarray(X0, dtype=float)[None])[0]
    x1 = analyzer.x1
    x1_min = float(x1[np.argmin(pot.value(x1, X0[1]))])
    return classical_trajectory(pot, (x1_min, X0[1]), (0.0, pot.m2 * v[1]), (0.0, t_end), dt)


@dataclass
class TrajectoryAnalysis:
    trajectory: Trajectory
    times: np.ndarray
    r_cond: np.ndarray
    deviation: np.ndarray
    classicality: Classicality
    norm_drift: np.ndarray
    singular: bool


def analyze_trajectory(pot, analyzer, fields, model: VelocityModel, X0, config, reference=None,
                       classical=None) -> TrajectoryAnalysis:
    """Trajectory, conditional slices, tilded wave function and its diagnostics."""
    times = slice_times(config)
    flow = Flow(fields, model)
    traj = integrate_trajectory(flow, X0, (0.0, times[-1]), config.step, **_flow_kwargs(fields))
    if traj.captured:
        times = times[times <= traj.times[-1] + 1e-12]
    series = analyzer.along(traj, times)
    tilde = build_tilde(series)
    r = cond_schrodinger_residual(tilde.psi, series.V_c, analyzer.axis1, analyzer.m1,
                                  config.slice_step, series.trusted)
    if classical is not None:
        gap = float(np.max(np.abs(classical.positions[: len(traj.times), 1] - traj.positions[:, 1])))
    else:
        gap = float("nan")
    dev = (l2_norm(tilde.psi - reference[: len(times)], analyzer.axis1)
           if reference is not None else np.full(len(times), np.nan))
    w = analyzer.axis1.quadrature_weights()
    norm = np.sum(np.abs(tilde.psi) ** 2 * w, axis=1)
    return TrajectoryAnalysis(traj, times, r, dev, classicality_metrics(series, gap),
                              np.abs(norm - 1.0), bool(tilde.gamma.singular.any()))


def reference_for(pot, analyzer, tilde0: np.ndarray, classical: Trajectory, times, dt):
    spline = classical._spline()
    x1 = analyzer.x1
    return propagate_reference(tilde0, analyzer.axis1, analyzer.m1,
                               lambda t: pot.value(x1, spline(t)[1]), 0.0, times, dt)


# ---------------------------------------------------------------------------
# classicality
# ---------------------------------------------------------------------------


def run_classicality(config: ExperimentConfig, scenario=None, log=None) -> dict:
    """Classicality metrics per model, aggregated over the initial points.

    The ratio is the median over runs; spreads, flatness and trajectory
    gaps are maxima over runs.
    """
    pot, state = scenario if scenario is not None else load_scenario(config)
    fields = StateFields(state, pot.masses)
    analyzer = ConditionalAnalyzer(pot, state)
    X0s = initial_points(config, fields)
    times = slice_times(config)
    out = {}
    for spec in model_specs(config):
        model = make_model(spec, fields, config)
        metrics, singular = [], False
        for X0 in X0s:
            cl = _matched_classical(pot, fields, X0, times[-1], config.step)
            a = analyze_trajectory(pot, analyzer, fields, model, X0, config, classical=cl)
            metrics.append(a.classicality)
            singular |= a.singular
        agg = Classicality(
            ratio=float(np.median([m.ratio for m in metrics])),
            v2_spread=float(np.max([m.v2_spread for m in metrics])),
            gamma_flatness=float(np.max([m.gamma_flatness for m in metrics])),
            trajectory_gap=float(np.max([m.trajectory_gap for m in metrics])),
        )
        out[spec.label] = dict(agg.as_dict(), singular_gamma=singular)
        if log:
            log(f"classicality {spec.label}: ratio={agg.ratio:.3g} classical={agg.classical}")
    return out


def _matched_classical(pot, fields, X0, t_end, dt):
    """Classical run with ``X(0) = X0`` and ``P(0) = m v(X0)`` (Bohmian velocities)."""
    v = Flow(fields)(np.asarray(X0, dtype=float)[None])[0]
    m = np.array(pot.masses)
    return classical_trajectory(pot, X0, m * v, (0.0, t_end), dt)


# ---------------------------------------------------------------------------
# velocity comparison
# ---------------------------------------------------------------------------


@dataclass
class ModelSummary:
    label: str
    kind: str
    lam: float
    times: np.ndarray
    r_cond: np.ndarray
    deviation: np.ndarray
    deviation_max: float
    deviation_end: float
    classicality: dict
    norm_drift: float
    singular_gamma: bool
    tv: np.ndarray | None = None
    ratio_max: float = float("nan")
    ratio_end: float = float("nan")
    r_cond_worst: float = float("nan")
    deviation_end_worst: float = float("nan")

    def to_dict(self) -> dict:
        return _clean({k: getattr(self, k) for k in self.__dataclass_fields__})


@dataclass
class ComparisonReport:
    """Per-model diagnostics and verdict ratios against the Bohmian baseline.

    ``deviation`` is the run-averaged ``||psi~_c - psi_ref||`` series;
    ``deviation_max`` averages its running maximum up to ``t_final`` over
    the initial points and ``ratio_max`` divides that by the baseline's.
    ``r_cond_worst`` and ``deviation_end_worst`` are the largest single-run
    values.
    """

    scenario: str
    baseline: str
    models: list

    def summary(self, label: str) -> ModelSummary:
        for m in self.models:
            if m.label == label:
                return m
        raise KeyError(label)

    @property
    def ratios(self) -> dict:
        return {m.label: m.ratio_max for m in self.models}

    def to_dict(self) -> dict:
        return _clean({"scenario": self.scenario, "baseline": self.baseline,
                       "ratios": self.ratios,
                       "ratios_end": {m.label: m.ratio_end for m in self.models},
                       "models": [m.to_dict() for m in self.models]})

    def long_rows(self):
        for m in self.models:
            for i, t in enumerate(m.times):
                yield (m.label, m.lam, t, "r_cond_schrod", m.r_cond[i])
                yield (m.label, m.lam, t, "deviation", m.deviation[i])

    def write(self, out_dir) -> list[Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        files = []
        p = out_dir / "comparison.json"
        p.write_text(json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n", encoding="utf-8")
        files.append(p)
        p = out_dir / "comparison_long.csv"
        write_csv(p, ["model", "lambda", "t", "metric", "value"], self.long_rows())
        files.append(p)
        for m in self.models:
            p = out_dir / f"model_{_slug(m.label)}.csv"
            rows = ((t, m.r_cond[i], m.deviation[i]) for i, t in enumerate(m.times))
            write_csv(p, ["t", "r_cond_schrod", "deviation"], rows)
            files.append(p)
        return files


def _slug(label: str) -> str:
    return "".join(c if c.isalnum() or c in "-." else "_" for c in label).strip("_")


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def run_velocity_comparison(config: ExperimentConfig, scenario=None, log=None,
                            equivariance: EquivarianceResult | None = None) -> ComparisonReport:
    """Paired runs of every model against one reference propagation per initial point.

    For each initial point the environment's classical trajectory is
    model-independent; the reference solves the conditional Schrodinger
    equation under ``V(x1, X2_classical(t))`` from ``psi~_c(0)``.
    """
    pot, state = scenario if scenario is not None else load_scenario(config)
    fields = StateFields(state, pot.masses)
    analyzer = ConditionalAnalyzer(pot, state)
    X0s = initial_points(config, fields)
    times = slice_times(config)

    refs, classicals = [], []
    for X0 in X0s:
        cl = environment_classical(pot, analyzer, fields, X0, times[-1], config.step)
        s0 = analyzer.series(times[:3], np.full(3, X0[1]), np.zeros(3))
        w = analyzer.axis1.quadrature_weights()
        psi0 = s0.psi[0] / math.sqrt(float(np.sum(w * np.abs(s0.psi[0]) ** 2)))
        refs.append(reference_for(pot, analyzer, psi0, cl, times, config.step))
        classicals.append(cl)

    summaries = []
    for spec in model_specs(config, include_baseline=True):
        model = make_model(spec, fields, config)
        runs = [analyze_trajectory(pot, analyzer, fields, model, X0, config, ref, _matched_classical(
            pot, fields, X0, times[-1], config.step)) for X0, ref in zip(X0s, refs)]
        n = min(len(a.times) for a in runs)
        dev = np.array([a.deviation[:n] for a in runs])
        r = np.array([a.r_cond[:n] for a in runs])
        cls = [a.classicality for a in runs]
        summaries.append(ModelSummary(
            label=spec.label, kind=spec.kind, lam=spec.lam, times=times[:n],
            r_cond=np.nanmean(r, axis=0), deviation=dev.mean(axis=0),
            deviation_max=float(np.mean(dev.max(axis=1))),
            deviation_end=float(np.mean(dev[:, -1])),
            classicality=Classicality(
                float(np.median([c.ratio for c in cls])), float(np.max([c.v2_spread for c in cls])),
                float(np.max([c.gamma_flatness for c in cls])),
                float(np.max([c.trajectory_gap for c in cls]))).as_dict(),
            norm_drift=float(np.max([a.norm_drift.max() for a in runs])),
            singular_gamma=any(a.singular for a in runs),
            tv=None if equivariance is None else equivariance.tv.get(spec.label),
            r_cond_worst=float(np.nanmax(r)) if np.any(np.isfinite(r)) else float("nan"),
            deviation_end_worst=float(np.max(dev[:, -1])),
        ))
        if log:
            log(f"compare {spec.label}: deviation max={summaries[-1].deviation_max:.3e}")
    base = summaries[0]
    for s in summaries:
        s.ratio_max = s.deviation_max / base.deviation_max
        s.ratio_end = s.deviation_end / base.deviation_end
    return ComparisonReport(config.scenario, base.label, summaries)


# ---------------------------------------------------------------------------
# residuals
# ---------------------------------------------------------------------------


@dataclass
class ResidualRun:
    report: ResidualReport
    levels: list
    r_levels: list
    spacing: list
    r_no_gamma: np.ndarray
    r_absorbed: np.ndarray
    r_no_gamma_levels: list = field(default_factory=list)


def _pseudo_at_level(config: ExperimentConfig, level: int, t_window=None):
    pot, state = load_scenario(config, level)
    fields = StateFields(state, pot.masses)
    analyzer = ConditionalAnalyzer(pot, state)
    D = config.slice_step / 2**level
    dt = config.step / 2**level
    X0 = initial_points(config, fields)[0]
    n = config.n_slices * 2**level
    times = D * np.arange(n + 1)
    times[-1] = config.t_final
    traj = integrate_trajectory(Flow(fields), X0, (0.0, times[-1]), dt, **_flow_kwargs(fields))
    times = times[times <= traj.times[-1] + 1e-12]
    series = analyzer.along(traj, times)
    pr = pseudo_schrodinger_residual(series, traj)
    if t_window is not None:
        keep = (times >= t_window[0] - 1e-12) & (times <= t_window[1] + 1e-12)
    else:
        keep = np.ones(len(times), dtype=bool)
    return pot, state, analyzer, traj, series, pr, keep, state.psi.grid.axis1.dx


def run_residuals(config: ExperimentConfig, levels: int = 2, t_window=None, log=None) -> ResidualRun:
    """Residuals of both evolution equations along a Bohmian trajectory.

    The pseudo-Schrodinger residual is recomputed with ``dx`` and
    ``dt_slice`` halved ``levels - 1`` times; its convergence order is the
    slope of the per-level median over interior slices in ``t_window``
    (default: the whole run) against ``dx``. The median keeps the estimate
    insensitive to the few slices where ``psi_c`` passes through a node.
    ``r_no_gamma_levels`` holds the same medians with the ``Gamma`` term dropped.
    """
    r_levels, r_nog, spacing = [], [], []
    first = None
    for level in range(levels):
        pot, state, analyzer, traj, series, pr, keep, dx = _pseudo_at_level(config, level, t_window)
        keep[0] = keep[-1] = False
        vals = pr.r_pseudo[keep]
        r_levels.append(float(np.nanmedian(vals)) if np.any(np.isfinite(vals)) else float("nan"))
        nog = pr.r_no_gamma[keep]
        r_nog.append(float(np.nanmedian(nog)) if np.any(np.isfinite(nog)) else float("nan"))
        spacing.append(dx)
        if level == 0:
            first = (analyzer, traj, series, pr)
        if log:
            log(f"residuals level {level}: dx={dx:.4g} r_pseudo={r_levels[-1]:.3e}")
    analyzer, traj, series, pr = first
    tilde = build_tilde(series)
    r_cond = cond_schrodinger_residual(tilde.psi, series.V_c, analyzer.axis1, analyzer.m1,
                                       config.slice_step, series.trusted)
    order = convergence_order(spacing, r_levels) if levels > 1 and np.all(np.isfinite(r_levels)) else float("nan")
    flags = []
    if pr.singular.any():
        flags.append("singular_gamma")
    if traj.captured:
        flags.append("node_capture")
    if series.node_dominated().any():
        flags.append("node_dominated_slice")
    report = ResidualReport(series.times, r_cond, pr.r_pseudo, order,
                            classicality_metrics(series), flags)
    return ResidualRun(report, list(range(levels)), r_levels, spacing, pr.r_no_gamma, pr.r_absorbed, r_nog)
