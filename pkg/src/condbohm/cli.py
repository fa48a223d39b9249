"""Command line entry point: ``condbohm <subcommand> [--config PATH] [--out DIR] ...``.

Configuration files are INI-style. Keys of :class:`ExperimentConfig` live in
an ``[experiment]`` section (a file without any section header is read as
that section); scenario builder parameters go in ``[scenario]``.
"""

from __future__ import annotations

import argparse
import ast
import configparser
import hashlib
import json
import math
import re
import sys
import traceback
from dataclasses import fields as dc_fields
from datetime import datetime, timezone
from pathlib import Path

from condbohm import __version__
from condbohm.conditional import _clean
from condbohm.dynamics import NodeProximityError, RecordingError
from condbohm.experiments import (
    ConfigError, ExperimentConfig, run_classicality, run_equivariance, run_residuals,
    run_velocity_comparison, write_csv,
)
from condbohm.grid import GridError
from condbohm.interp import OutOfDomainError
from condbohm.stationary import (
    ANALYTIC_SCENARIOS, SCENARIO_PARAMETERS, SCENARIOS, EigenSolveError, ScenarioError,
)

SUBCOMMANDS = ("scenarios", "equivariance", "classicality", "compare", "residuals")
MAIN_SECTION = "experiment"
SCENARIO_SECTION = "scenario"
MANIFEST = "manifest.json"

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_CONFIG = 2
EXIT_SCENARIO = 3
EXIT_EIGENSOLVE = 4
EXIT_DOMAIN = 5

_ERROR_CODES = (
    (ConfigError, EXIT_CONFIG, "config"),
    (GridError, EXIT_CONFIG, "grid"),
    (ScenarioError, EXIT_SCENARIO, "scenario"),
    (EigenSolveError, EXIT_EIGENSOLVE, "eigensolve"),
    (OutOfDomainError, EXIT_DOMAIN, "domain"),
    (NodeProximityError, EXIT_DOMAIN, "node"),
    (RecordingError, EXIT_DOMAIN, "recording"),
)


class ConfigParseError(ConfigError):
    def __init__(self, message: str, line: int | None = None):
        where = f"line {line}: " if line is not None else ""
        super().__init__("config", where + message)
        self.line = line


# ---------------------------------------------------------------------------
# config parsing
# ---------------------------------------------------------------------------

_LEADING_SECTION = re.compile(r"(?:[ \t]*(?:[#;][^\n]*)?\n)*[ \t]*\[")
_PI = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)?\s*\*?\s*pi\s*$")


def parse_float(text: str) -> float:
    """A float, also accepting ``pi`` and ``<number>*pi`` (or ``<number>pi``)."""
    text = text.strip().strip('"').strip("'")
    m = _PI.match(text)
    if m:
        return (float(m.group(1)) if m.group(1) else 1.0) * math.pi
    return float(text)


def parse_list(text: str) -> list[str]:
    text = text.strip().strip('"').strip("'").strip("[]()")
    return [t.strip() for t in text.split(",") if t.strip()]


def parse_grid(text: str) -> tuple[int, int]:
    parts = re.split(r"[xX*,]", text.strip().strip('"'))
    if len(parts) != 2:
        raise ValueError(f"grid must look like N1xN2, got {text!r}")
    n1, n2 = int(parts[0]), int(parts[1])
    if n1 < 1 or n2 < 1:
        raise ValueError(f"grid sizes must be positive, got {text!r}")
    return n1, n2


def _int(text):
    return int(str(text).strip().strip('"'))


def _str(text):
    return str(text).strip().strip('"').strip("'")


_CONVERTERS = {
    "scenario": _str,
    "velocity_models": lambda t: tuple(parse_list(t)),
    "lambda_sweep": lambda t: tuple(parse_float(x) for x in parse_list(t)),
    "stream_lambda": parse_float,
    "stream_width": parse_float,
    "n_ensemble": _int,
    "n_trajectories": _int,
    "n_reseeds": _int,
    "n_bins": _int,
    "n_checkpoints": _int,
    "t_final": parse_float,
    "dt": parse_float,
    "dt_slice": parse_float,
    "grid": parse_grid,
    "x0": lambda t: tuple(parse_float(x) for x in parse_list(t)),
    "seed": _int,
    "output_dir": _str,
}
assert set(_CONVERTERS) == {f.name for f in dc_fields(ExperimentConfig)} - {"scenario_params"}


def _scenario_value(text: str):
    text = _str(text)
    try:
        return int(text)
    except ValueError:
        return parse_float(text)


def parse_config_text(text: str, source: str = "<config>") -> ExperimentConfig:
    """Parse configuration text; see :func:`parse_config`."""
    offset = 0
    if not _LEADING_SECTION.match(text):
        text = f"[{MAIN_SECTION}]\n" + text
        offset = 1
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.ParsingError as exc:
        line, content = exc.errors[0]
        text_line = ast.literal_eval(content) if content[:1] in "'\"" else content
        raise ConfigParseError(f"cannot parse {text_line.strip()!r}", line - offset) from None
    except (configparser.DuplicateOptionError, configparser.DuplicateSectionError) as exc:
        raise ConfigParseError(exc.message.split(": ", 1)[-1] if hasattr(exc, "message") else str(exc),
                               (exc.lineno or 0) - offset) from None
    except configparser.Error as exc:
        raise ConfigParseError(str(exc)) from None

    for section in parser.sections():
        if section not in (MAIN_SECTION, SCENARIO_SECTION):
            raise ConfigError(f"[{section}]", "unknown section")
    kwargs = {}
    if parser.has_section(MAIN_SECTION):
        for key, raw in parser.items(MAIN_SECTION):
            if key not in _CONVERTERS:
                raise ConfigError(key, "unknown key")
            try:
                kwargs[key] = _CONVERTERS[key](raw)
            except ValueError as exc:
                raise ConfigError(key, f"invalid value {raw!r} ({exc})") from None
    if parser.has_section(SCENARIO_SECTION):
        params = {}
        for key, raw in parser.items(SCENARIO_SECTION):
            try:
                params[key] = _scenario_value(raw)
            except ValueError:
                raise ConfigError(f"scenario.{key}", f"invalid value {raw!r}") from None
        kwargs["scenario_params"] = params
    return ExperimentConfig(**kwargs)


def parse_config(path) -> ExperimentConfig:
    """Read an INI-style config file into a validated :class:`ExperimentConfig`.

    Unknown keys and sections are rejected by name; syntax errors carry the
    line number.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError("config", f"file not found: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"), str(path))


# ---------------------------------------------------------------------------
# outputs
# ---------------------------------------------------------------------------


def write_json(path: Path, payload) -> Path:
    path.write_text(json.dumps(_clean(payload), sort_keys=True, indent=1, ensure_ascii=False) + "\n",
                    encoding="utf-8")
    return path


def sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out_dir: Path, config: ExperimentConfig | None, subcommand: str, files,
                   started: str) -> Path:
    entries = [{"path": Path(f).name, "sha256": sha256(f)} for f in sorted(files, key=lambda p: Path(p).name)]
    payload = {
        "subcommand": subcommand,
        "version": __version__,
        "seed": None if config is None else int(config.seed),
        "config": None if config is None else config.snapshot(),
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
        "files": entries,
    }
    return write_json(out_dir / MANIFEST, payload)


def _scenarios_payload():
    return {name: {"analytic": name in ANALYTIC_SCENARIOS, "parameters": SCENARIO_PARAMETERS[name]}
            for name in SCENARIOS}


def _run_subcommand(sub: str, config: ExperimentConfig, out: Path, log) -> list[Path]:
    files = []
    if sub == "scenarios":
        files.append(write_json(out / "scenarios.json", _scenarios_payload()))
    elif sub == "equivariance":
        res = run_equivariance(config, log=log)
        files.append(write_json(out / "equivariance.json", res.to_dict()))
        rows = ((label, t, v) for label, series in res.tv.items() for t, v in zip(res.times, series))
        files.append(write_csv(out / "equivariance.csv", ["model", "t", "tv"], rows))
    elif sub == "classicality":
        res = run_classicality(config, log=log)
        files.append(write_json(out / "classicality.json", res))
        rows = ((label, k, v) for label, metrics in res.items() for k, v in sorted(metrics.items()))
        files.append(write_csv(out / "classicality.csv", ["model", "metric", "value"], rows))
    elif sub == "compare":
        files.extend(run_velocity_comparison(config, log=log).write(out))
    elif sub == "residuals":
        run = run_residuals(config, log=log)
        payload = run.report.to_dict()
        payload["levels"] = {"dx": run.spacing, "r_pseudo_median": run.r_levels,
                             "r_no_gamma_median": run.r_no_gamma_levels}
        files.append(write_json(out / "residuals.json", payload))
        files.append(run.report.to_csv(out / "residuals.csv"))
    else:  # pragma: no cover - argparse restricts choices
        raise ConfigError("subcommand", f"unknown subcommand {sub!r}")
    return files


def run(subcommand: str, config: ExperimentConfig, out_dir=None, quiet: bool = True) -> int:
    """Execute one subcommand, write its outputs and the manifest into ``out_dir``.

    Returns the exit status; failures write ``error.json`` (kind, message,
    exit code) and are reported on stderr.
    """
    out = Path(out_dir if out_dir is not None else config.output_dir)
    started = datetime.now(timezone.utc).isoformat()
    log = None if quiet else (lambda msg: print(msg, file=sys.stderr))
    try:
        out.mkdir(parents=True, exist_ok=True)
        files = _run_subcommand(subcommand, config, out, log)
        write_manifest(out, config, subcommand, files, started)
    except Exception as exc:  # noqa: BLE001 - mapped to exit codes below
        return _report_error(exc, out)
    if not quiet:
        print(f"{subcommand}: wrote {len(files)} file(s) and {MANIFEST} to {out}", file=sys.stderr)
    return EXIT_OK


def _classify(exc: Exception) -> tuple[int, str]:
    for cls, code, kind in _ERROR_CODES:
        if isinstance(exc, cls):
            return code, kind
    return EXIT_INTERNAL, "internal"


def _report_error(exc: Exception, out: Path | None) -> int:
    code, kind = _classify(exc)
    record = {"error": kind, "message": str(exc), "exit_code": code,
              "key": getattr(exc, "key", None), "line": getattr(exc, "line", None)}
    if code == EXIT_INTERNAL:
        record["traceback"] = traceback.format_exc()
    print(json.dumps(record, sort_keys=True), file=sys.stderr)
    if out is not None:
        try:
            out.mkdir(parents=True, exist_ok=True)
            write_json(out / "error.json", record)
        except OSError:
            pass
    return code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="condbohm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="INI-style experiment configuration")
        p.add_argument("--out", type=Path, help="output directory (default: output_dir from the config)")
        p.add_argument("--seed", type=int, help="overrides the configured seed")
        p.add_argument("--grid", type=str, help="grid size N1xN2, overrides the configured grid")
        p.add_argument("--quiet", action="store_true", help="suppress progress messages")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = parse_config(args.config) if args.config else ExperimentConfig()
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.grid is not None:
            try:
                overrides["grid"] = parse_grid(args.grid)
            except ValueError as exc:
                raise ConfigError("grid", str(exc)) from None
        if overrides:
            from dataclasses import asdict

            config = ExperimentConfig(**{**asdict(config), **overrides})
    except Exception as exc:  # noqa: BLE001
        return _report_error(exc, args.out)
    if args.subcommand == "scenarios" and not args.out and not args.config:
        for name, info in _scenarios_payload().items():
            kind = "analytic" if info["analytic"] else "numerical"
            params = ", ".join(f"{k}={v}" for k, v in info["parameters"].items())
            print(f"{name} ({kind}): {params}")
        return EXIT_OK
    return run(args.subcommand, config, args.out, quiet=args.quiet)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
