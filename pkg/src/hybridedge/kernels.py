"""The two workload kernels: daily-activity aggregation and image tagging.

Image tagging is a stub: it does no detection, it files the input under the
category of the requested detector. The orchestration around it is what gets
exercised; the cost of real detection comes from the calibration profiles.
"""

from __future__ import annotations

import csv
import io
import json
import shutil
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Iterable

from .errors import EmptyDataset, MalformedRow, UnreadablePayload, UnsupportedAppClass
from .model import BODY_DETECT, CAR_DETECT, FACE_DETECT, OBJECT_DETECT

REQUIRED_COLUMNS = ("Id", "ActivityDate", "TotalSteps", "TotalDistance", "Calories")

CATEGORIES = {
    FACE_DETECT: "Face",
    CAR_DETECT: "Vehicle",
    BODY_DETECT: "Body",
    OBJECT_DETECT: "Object",
}

BUILTIN_PREFIX = "builtin:"


def resolve_payload(payload_ref: str) -> Path:
    """Map ``builtin:<name>`` to the bundled sample data; other refs are paths."""
    if payload_ref.startswith(BUILTIN_PREFIX):
        name = payload_ref[len(BUILTIN_PREFIX):]
        return Path(str(resources.files("hybridedge") / "data" / name))
    if payload_ref.startswith("file://"):
        return Path(payload_ref[len("file://"):])
    return Path(payload_ref)


@dataclass(frozen=True)
class ActivityRow:
    user: str
    activity_date: str
    total_steps: int
    line: int


@dataclass(frozen=True)
class AggregateReport:
    per_user_mean_steps: dict[str, float]
    max_user: str
    max_mean: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "per_user_mean_steps": {u: self.per_user_mean_steps[u] for u in sorted(self.per_user_mean_steps, key=user_key)},
            "max_user": self.max_user,
            "max_mean": self.max_mean,
        }


def user_key(user: str):
    """Numeric ids sort numerically and before non-numeric ones."""
    return (0, int(user), "") if user.isdigit() else (1, 0, user)


def parse_activity_csv(text: str) -> list[ActivityRow]:
    reader = csv.DictReader(io.StringIO(text))
    header = reader.fieldnames or []
    missing = [c for c in REQUIRED_COLUMNS if c not in header]
    if missing:
        raise MalformedRow(1, f"missing columns {missing}")
    rows = []
    for record in reader:
        line = reader.line_num
        if None in record or any(record.get(c) is None for c in REQUIRED_COLUMNS):
            raise MalformedRow(line, "wrong number of fields")
        user = record["Id"].strip()
        if not user:
            raise MalformedRow(line, "empty Id")
        try:
            steps = int(record["TotalSteps"].strip())
        except ValueError:
            raise MalformedRow(line, f"TotalSteps {record['TotalSteps']!r} is not an integer") from None
        if steps < 0:
            raise MalformedRow(line, "TotalSteps is negative")
        rows.append(ActivityRow(user, record["ActivityDate"].strip(), steps, line))
    return rows


def stream_aggregate(rows: Iterable[ActivityRow | tuple[str, int]]) -> AggregateReport:
    """Mean TotalSteps per user, and the user with the highest mean.

    Rows may be :class:`ActivityRow` or plain ``(user, steps)`` pairs. Ties on
    the maximum go to the smallest user id.
    """
    totals: dict[str, int] = {}
    counts: dict[str, int] = {}
    for row in rows:
        user, steps = (row.user, row.total_steps) if isinstance(row, ActivityRow) else row
        totals[user] = totals.get(user, 0) + steps
        counts[user] = counts.get(user, 0) + 1
    if not totals:
        raise EmptyDataset("no activity rows")
    means = {u: totals[u] / counts[u] for u in totals}
    max_user = min(means, key=lambda u: (-means[u], user_key(u)))
    return AggregateReport(means, max_user, means[max_user])


def aggregate_file(payload_ref: str, out_dir: Path, instance_id: str) -> Path:
    """Run the aggregation over a CSV payload and write the JSON report."""
    path = resolve_payload(payload_ref)
    try:
        text = path.read_text()
    except OSError as exc:
        raise UnreadablePayload(f"{payload_ref}: {exc.strerror or exc}") from None
    report = stream_aggregate(parse_activity_csv(text))
    out_dir.mkdir(parents=True, exist_ok=True)
    target = out_dir / f"StepsReport_{instance_id}.json"
    target.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=False) + "\n")
    return target


def image_tag(payload_ref: str, app_class: str, instance_id: str, out_dir: Path) -> Path:
    """Copy the payload to ``<Category>_<instance_id>.jpg`` under ``out_dir``."""
    category = CATEGORIES.get(app_class)
    if category is None:
        raise UnsupportedAppClass(f"{app_class} is not an image detection class")
    path = resolve_payload(payload_ref)
    if not path.is_file():
        raise UnreadablePayload(f"{payload_ref}: not a readable file")
    out_dir.mkdir(parents=True, exist_ok=True)
    target = out_dir / f"{category}_{instance_id}.jpg"
    try:
        shutil.copyfile(path, target)
    except OSError as exc:
        raise UnreadablePayload(f"{payload_ref}: {exc.strerror or exc}") from None
    return target

