import argparse
import json
import sys
import tomllib
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from pydantic import ValidationError

from relframes import __version__
from relframes.api.commands import run_command
from relframes.api.reporting import emit_report
from relframes.api.schemas import COMMANDS, Report, RunConfig
from relframes.core.config import settings
from relframes.core.errors import ConfigError, RelframesError
from relframes.core.logging import get_logger, set_level

logger = get_logger(__name__)

# flag name -> (type, help); defaults live on RunConfig
FLAGS = {
    "theta": (float, "phase of the system or first cavity (radians)"),
    "theta_prime": (float, "phase of the reference or second cavity (radians)"),
    "j": (int, "half-width of the angle-state window (model2), variance of |phi|^2 (smear)"),
    "n": (int, "number level / reference truncation (qubit, model3, as, pom-validate)"),
    "m": (float, "condensate mean number |beta|^2"),
    "k": (int, "Chebyshev order (appendix), kernel variance (smear)"),
    "q1": (float, "mean photon number of cavity 1"),
    "q2": (float, "mean photon number of cavity 2"),
    "g": (float, "nucleon-cavity coupling"),
    "T": (float, "interaction time"),
    "phi": (float, "free-evolution phase (dowling)"),
    "cutoff": (int, "number-space truncation"),
    "epsilon": (float, "width / tail parameter in (0, 1)"),
    "bins": (int, "circle bins for phase observables"),
    "which": (str, "bound family for the bounds sweep: prop1, owb, tradeoff"),
    "trials": (int, "number of seeded random trials"),
    "seed": (int, "64-bit sweep seed"),
    "scheme": (str, "JSON measurement scheme file (way, strong-way)"),
    "format": (str, "report format: json or csv"),
    "output": (str, "report path (relative paths go under RELFRAMES_OUTPUT_DIR)"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="relframes",
        description="Reference-frame relativisation experiments with machine-readable reports.",
    )
    parser.add_argument("--version", action="version", version=f"relframes {__version__}")
    parser.add_argument("--log-level", default=None, help="override RELFRAMES_LOG_LEVEL")
    parser.add_argument("--config", default=None, help="JSON or TOML file of parameters")
    parser.add_argument("command", choices=COMMANDS)
    for name, (kind, text) in FLAGS.items():
        default = RunConfig.model_fields[name].default
        parser.add_argument(
            f"--{name.replace('_', '-')}",
            dest=name,
            type=kind,
            default=None,
            help=f"{text} (default: {default})",
        )
    return parser


def _read_config_file(path: str) -> Dict[str, Any]:
    p = Path(path)
    try:
        raw = p.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {p}: {exc}") from exc
    try:
        if p.suffix == ".toml":
            data = tomllib.loads(raw.decode("utf-8"))
        else:
            data = json.loads(raw)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"config file {p} is not valid: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config file {p} must hold a table of parameters")
    return data


def parse_config(argv: Optional[Sequence[str]] = None) -> Tuple[RunConfig, Dict[str, str], str]:
    """
    Defaults < config file < flags. Returns the config, where every parameter came
    from, and the requested log level.
    """
    args = build_parser().parse_args(argv)
    values: Dict[str, Any] = {}
    provenance: Dict[str, str] = {}
    if args.config:
        for key, value in _read_config_file(args.config).items():
            values[key] = value
            provenance[key] = "file"
    for name in FLAGS:
        value = getattr(args, name)
        if value is not None:
            if provenance.get(name) == "file" and values[name] != value:
                logger.info(f"Flag --{name} overrides config file value {values[name]!r}")
            values[name] = value
            provenance[name] = "flag"
    values["command"] = args.command
    try:
        cfg = RunConfig(**values)
    except ValidationError as exc:
        first = exc.errors()[0]
        where = ".".join(str(k) for k in first["loc"]) or "config"
        raise ConfigError(f"{where}: {first['msg']}") from exc
    for name in RunConfig.model_fields:
        provenance.setdefault(name, "default")
    provenance["command"] = "flag"
    return cfg, dict(sorted(provenance.items())), args.log_level or settings.LOG_LEVEL


def main(argv: Optional[List[str]] = None) -> int:
    """Parse, run, emit. Exit codes: 0 pass, 1 failed check or invariant, 2 bad input."""
    try:
        cfg, provenance, level = parse_config(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except RelframesError as exc:
        logger.error(f"Invalid configuration: {exc}")
        return exc.exit_code
    set_level(level)

    try:
        report = run_command(cfg, provenance)
    except RelframesError as exc:
        logger.error(f"{cfg.command} failed: {exc}")
        partial = Report(
            command=cfg.command,
            version=__version__,
            seed=cfg.seed,
            parameters=cfg.model_dump(exclude={"format", "output"}),
            provenance=provenance,
            passed=False,
            error=str(exc),
        )
        try:
            emit_report(partial, cfg.format, cfg.output)
        except RelframesError as emit_exc:
            logger.error(f"Could not emit partial report: {emit_exc}")
        return exc.exit_code

    try:
        emit_report(report, cfg.format, cfg.output)
    except RelframesError as exc:
        logger.error(f"{exc}")
        return exc.exit_code
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
