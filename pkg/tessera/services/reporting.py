# tessera/services/reporting.py
"""
Report writer.
CSV and JSON outputs with a timestamped header and a deterministic body.
"""
import csv
import io
import json
import logging
import math
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)


def to_plain(value: Any) -> Any:
    """numpy scalars and containers as plain JSON values."""
    if isinstance(value, dict):
        return {str(k): to_plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_plain(value.tolist())
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return float(value) if math.isfinite(value) else None
    return value


class ReportWriter:
    """Formats experiment outputs; the body never depends on the clock."""

    def __init__(self, clock=None):
        self._clock = clock or (lambda: datetime.now(timezone.utc))

    def timestamp(self) -> str:
        return self._clock().isoformat(timespec="seconds")

    def csv_body(self, columns: Sequence[str], rows: List[Dict[str, Any]]) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=list(columns), extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: self._cell(v) for k, v in row.items()})
        return buf.getvalue()

    @staticmethod
    def _cell(value: Any) -> Any:
        if isinstance(value, (bool, np.bool_)):
            return int(value)
        if isinstance(value, (float, np.floating)):
            return repr(float(value))
        return to_plain(value)

    def csv_text(self, config: dict, columns: Sequence[str], rows: List[Dict[str, Any]]) -> str:
        header = (
            f"# generated_at: {self.timestamp()}\n"
            f"# config: {json.dumps(to_plain(config), sort_keys=True)}\n"
        )
        return header + self.csv_body(columns, rows)

    def json_body(self, body: Any) -> str:
        return json.dumps(to_plain(body), sort_keys=True, indent=2)

    def json_text(self, config: dict, body: Any) -> str:
        doc = {"generated_at": self.timestamp(), "config": to_plain(config), "body": to_plain(body)}
        return json.dumps(doc, sort_keys=True, indent=2)

    def write(self, path: str, text: str) -> Path:
        out = Path(path)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text, encoding="utf-8")
        logger.info("wrote %s", out)
        return out


def read_csv_rows(text: str) -> List[Dict[str, str]]:
    """Rows of a report CSV, header comment lines skipped."""
    lines = [line for line in text.splitlines() if not line.startswith("#")]
    return list(csv.DictReader(lines))


def strip_header(text: str) -> str:
    """Report body with the generated_at line removed (for reproducibility checks)."""
    if text.lstrip().startswith("{"):
        doc = json.loads(text)
        doc.pop("generated_at", None)
        return json.dumps(doc, sort_keys=True, indent=2)
    return "\n".join(line for line in text.splitlines() if not line.startswith("# generated_at:"))


def default_path(output_dir: str, command: str, suffix: str, out: Optional[str] = None) -> str:
    return out or str(Path(output_dir) / f"{command}.{suffix}")


# Global report writer
report_writer = ReportWriter()
