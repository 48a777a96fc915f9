"""CSV / JSON export. Every file carries ``schema_version`` and ``config_digest``.

Pairing CSV columns: schema_version, config_digest, pairing_id, num_games,
mean_score, stderr, bombout_rate, bombout_stderr, score_hist (``s:count``
pairs joined by ``;``), then ``a_<type>`` and ``b_<type>`` action counts for
each type in ACTION_TYPES. Trace CSV columns: schema_version, config_digest,
step, lower_level, upper_level, one fraction per action type, num_actions.
"""

from __future__ import annotations

import csv
import dataclasses
import json
from pathlib import Path
from typing import Iterable, Sequence

from .diagnostics import BombAuditReport, TraceRow
from .pairing import ACTION_TYPES, EvalReport

REPORT_SCHEMA_VERSION = 1

PAIRING_COLUMNS = (
    ["schema_version", "config_digest", "pairing_id", "num_games", "mean_score", "stderr",
     "bombout_rate", "bombout_stderr", "score_hist"]
    + [f"a_{t}" for t in ACTION_TYPES]
    + [f"b_{t}" for t in ACTION_TYPES]
)
TRACE_COLUMNS = (["schema_version", "config_digest", "step", "lower_level", "upper_level"]
                 + list(ACTION_TYPES) + ["num_actions"])


def report_row(r: EvalReport, config_digest: str) -> dict:
    row = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "config_digest": config_digest,
        "pairing_id": r.pairing_id,
        "num_games": r.num_games,
        "mean_score": f"{r.mean_score:.6f}",
        "stderr": f"{r.stderr:.6f}",
        "bombout_rate": f"{r.bombout_rate:.6f}",
        "bombout_stderr": f"{r.bombout_stderr:.6f}",
        "score_hist": ";".join(f"{s}:{c}" for s, c in sorted(r.score_histogram.items())),
    }
    for member, prefix in ((0, "a"), (1, "b")):
        counts = r.action_type_histogram.get(member, {})
        for t in ACTION_TYPES:
            row[f"{prefix}_{t}"] = counts.get(t, 0)
    return row


def write_reports_csv(path: Path, reports: Iterable[EvalReport], config_digest: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=PAIRING_COLUMNS)
        w.writeheader()
        for r in reports:
            w.writerow(report_row(r, config_digest))
    return path


def read_reports_csv(path: Path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def write_trace_csv(path: Path, rows: Sequence[TraceRow], config_digest: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for r in rows:
            w.writerow([REPORT_SCHEMA_VERSION, config_digest, r.step, r.lower_level, r.upper_level]
                       + [f"{f:.6f}" for f in r.fractions] + [r.num_actions])
    return path


def _jsonable(obj):
    if isinstance(obj, EvalReport):
        d = dataclasses.asdict(obj)
        d.pop("scores")
        d.pop("bombouts")
        d["score_histogram"] = {str(k): v for k, v in obj.score_histogram.items()}
        d["action_type_histogram"] = {str(k): v for k, v in obj.action_type_histogram.items()}
        return d
    if isinstance(obj, BombAuditReport):
        d = dataclasses.asdict(obj)
        d["events"] = [dataclasses.asdict(e) for e in obj.events]
        return d
    if dataclasses.is_dataclass(obj):
        return dataclasses.asdict(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def write_json(path: Path, kind: str, payload, config_digest: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"schema_version": REPORT_SCHEMA_VERSION, "config_digest": config_digest, "kind": kind, "data": payload}
    path.write_text(json.dumps(doc, indent=2, default=_jsonable, sort_keys=True))
    return path


def read_json(path: Path) -> dict:
    doc = json.loads(Path(path).read_text())
    if doc.get("schema_version") != REPORT_SCHEMA_VERSION:
        raise ValueError(f"{path}: unsupported report schema {doc.get('schema_version')}")
    return doc
