"""CSV reports and the run manifest."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

log = logging.getLogger(__name__)


@dataclass
class CsvReport:
    header: Sequence[str]
    rows: list = field(default_factory=list)
    path: Path | None = None

    def __post_init__(self):
        self.header = tuple(self.header)
        for i, row in enumerate(self.rows):
            if len(row) != len(self.header):
                raise ValueError(f"row {i} has {len(row)} cells, header has {len(self.header)}")

    def add(self, *cells):
        if len(cells) != len(self.header):
            raise ValueError(f"row has {len(cells)} cells, header has {len(self.header)}")
        self.rows.append(tuple(cells))


def format_cell(value) -> tuple[str, bool]:
    """Cell text and whether a non-finite value was blanked."""
    if isinstance(value, bool):
        return ("true" if value else "false"), False
    if isinstance(value, int) or (hasattr(value, "dtype") and value.dtype.kind in "iu"):
        return str(int(value)), False
    if isinstance(value, float) or (hasattr(value, "dtype") and value.dtype.kind == "f"):
        value = float(value)
        if not math.isfinite(value):
            return "", True
        return format(value, ".17g"), False
    return str(value), False


def emit_csv(report: CsvReport, path=None) -> Path:
    """Write ``report`` with LF line endings and 17 significant digits per float."""
    path = Path(path if path is not None else report.path)
    blanked = 0
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(report.header)
        for row in report.rows:
            cells = []
            for value in row:
                text, bad = format_cell(value)
                blanked += bad
                cells.append(text)
            writer.writerow(cells)
    if blanked:
        log.warning("%s: %d non-finite value(s) written as empty cells", path.name, blanked)
    return path


def read_csv(path) -> list[dict]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out_dir, files, meta: dict) -> Path:
    """List every artifact with its hash; written after everything else."""
    out_dir = Path(out_dir)
    entries = [{"path": Path(f).relative_to(out_dir).as_posix(), "sha256": sha256_file(f)}
               for f in sorted(files, key=lambda p: Path(p).name)]
    path = out_dir / "manifest.json"
    path.write_text(json.dumps({**meta, "files": entries}, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
