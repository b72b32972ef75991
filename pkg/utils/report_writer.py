# utils/report_writer.py: versioned CSV tables and JSON run files
# -----------------------------------------------------------------------------
# Every CSV starts with one `# <schema>` comment line, then a header row.
# Floats are written with repr() so reading them back gives the same value.
# -----------------------------------------------------------------------------

import csv
import json
import math
from pathlib import Path
from threading import Lock
from typing import Any, Dict, Iterable, List, Optional, Union

from config import REPORT_SCHEMA

_FILE_LOCK = Lock()

UNAVAILABLE = "unavailable"


def fmt_value(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)
    return str(value)


def parse_float(text: str) -> Optional[float]:
    if text in ("", UNAVAILABLE):
        return None
    return float(text)


def write_csv(path: Union[str, Path], header: List[str], rows: Iterable[Dict[str, Any]],
              schema: str = REPORT_SCHEMA) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with _FILE_LOCK:
        with path.open("w", newline="") as f:
            f.write(f"# {schema}\n")
            writer = csv.DictWriter(f, fieldnames=header)
            writer.writeheader()
            for row in rows:
                writer.writerow({k: fmt_value(row.get(k)) for k in header})
    return path


def read_csv(path: Union[str, Path]) -> List[Dict[str, str]]:
    path = Path(path)
    with path.open("r", newline="") as f:
        first = f.readline()
        if not first.startswith("#"):
            raise ValueError(f"{path}: missing schema comment line")
        return list(csv.DictReader(f))


def read_schema(path: Union[str, Path]) -> str:
    with Path(path).open("r") as f:
        return f.readline().lstrip("#").strip()


def write_json(path: Union[str, Path], payload: Dict[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with _FILE_LOCK:
        with path.open("w") as f:
            json.dump(payload, f, indent=2)
    return path


def read_json(path: Union[str, Path]) -> Dict[str, Any]:
    with Path(path).open("r") as f:
        return json.load(f)
