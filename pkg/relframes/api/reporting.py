import csv
import io
import json
import sys
from pathlib import Path
from typing import Any, Dict, Iterator, Optional, Tuple

from relframes.api.schemas import Report
from relframes.core.config import settings
from relframes.core.errors import InputError
from relframes.core.logging import get_logger

logger = get_logger(__name__)

SCALAR_SECTIONS = ("results", "residuals", "tolerances", "tails")


def report_to_json(report: Report) -> str:
    """
    Sorted keys. Floats carry full double precision: the shortest repr that parses back
    to the same double, never more than 17 significant digits.
    """
    data = report.model_dump(mode="json", exclude={"wall_clock"})
    return json.dumps(data, sort_keys=True, indent=2) + "\n"


def report_from_json(text: str) -> Report:
    return Report.model_validate(json.loads(text))


def named_scalars(report: Report) -> Iterator[Tuple[str, Any]]:
    """(section.name, value) for every scalar of the report, in sorted order."""
    for section in SCALAR_SECTIONS:
        values: Dict[str, Any] = getattr(report, section)
        for name in sorted(values):
            value = values[name]
            if isinstance(value, (bool, int, float, str)):
                yield f"{section}.{name}", value
    yield "passed", report.passed


def report_to_csv(report: Report) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["name", "value"])
    for name, value in named_scalars(report):
        writer.writerow([name, repr(value) if isinstance(value, float) else value])
    return buf.getvalue()


def resolve_output(path: Optional[str]) -> Optional[Path]:
    """Relative paths land under OUTPUT_DIR; None means stdout."""
    if path is None:
        return None
    p = Path(path)
    return p if p.is_absolute() else Path(settings.OUTPUT_DIR) / p


def emit_report(report: Report, fmt: str = "json", path: Optional[str] = None) -> None:
    text = report_to_json(report) if fmt == "json" else report_to_csv(report)
    target = resolve_output(path)
    if target is None:
        sys.stdout.write(text)
        return
    try:
        target.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot write report to {target}: {exc}") from exc
    logger.info(f"Report written to {target}")
