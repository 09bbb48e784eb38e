"""Metrics log, summaries and A/B comparison reports."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .errors import EmptySet, UnknownFilterField
from .model import MetricsRecord, mem_saving_pct

METRIC_FIELDS = ("cpu_avg_pct", "mem_peak_mb", "proc_time_ms", "boot_ms")
FILTER_FIELDS = ("workload_id", "flavor", "kind", "app_class", "node", "instance_id")

# Named record selections used by the CLI and the compare endpoint.
SELECTOR_PRESETS = {
    "container-datasci": {"kind": "container", "app_class": "StreamAggregate"},
    "hybrid-datasci": {"kind": "unikernel", "app_class": "StreamAggregate"},
    "unikernel-datasci": {"kind": "unikernel", "app_class": "StreamAggregate"},
}


class MetricsLog:
    """Append-only log of ``(record, attempt)``, deduplicated on ``(instance_id, attempt)``.

    With a ``path``, every accepted entry is also appended to that file as one
    JSON line, so :meth:`replay` can rebuild the log later.
    """

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self.entries: list[tuple[MetricsRecord, int]] = []
        self._keys: set[tuple[str, int]] = set()

    def append(self, record: MetricsRecord, attempt: int) -> bool:
        key = (record.instance_id, attempt)
        if key in self._keys:
            return False
        self._keys.add(key)
        self.entries.append((record, attempt))
        if self.path is not None:
            with self.path.open("a") as fh:
                fh.write(_line(record, attempt))
        return True

    @property
    def records(self) -> list[MetricsRecord]:
        return [r for r, _ in self.entries]

    def __len__(self):
        return len(self.entries)

    def dumps(self) -> str:
        return "".join(_line(r, a) for r, a in self.entries)

    @classmethod
    def replay(cls, path: str | Path) -> "MetricsLog":
        return cls.loads(Path(path).read_text())

    @classmethod
    def loads(cls, text: str) -> "MetricsLog":
        log = cls()
        for line in text.splitlines():
            if not line.strip():
                continue
            doc = json.loads(line)
            log.append(MetricsRecord.from_dict(doc), int(doc.get("attempt", 0)))
        return log


def _line(record: MetricsRecord, attempt: int) -> str:
    return json.dumps({**record.to_dict(), "attempt": attempt}, sort_keys=True) + "\n"


def parse_selector(text: str | Mapping[str, str] | None) -> dict[str, str]:
    """``"flavor:unikraft,app_class:StreamAggregate"`` or a preset name -> filter dict."""
    if text is None:
        return {}
    if isinstance(text, Mapping):
        filters = dict(text)
    elif text in SELECTOR_PRESETS:
        filters = dict(SELECTOR_PRESETS[text])
    else:
        filters = {}
        for part in filter(None, (s.strip() for s in text.split(","))):
            name, sep, value = part.partition(":")
            if not sep:
                name, sep, value = part.partition("=")
            if not sep:
                raise UnknownFilterField(f"filter term {part!r} is not 'field:value'")
            filters[name.strip()] = value.strip()
    unknown = set(filters) - set(FILTER_FIELDS)
    if unknown:
        raise UnknownFilterField(f"unknown filter fields {sorted(unknown)}; known: {list(FILTER_FIELDS)}")
    return filters


def _field(record: MetricsRecord, name: str) -> str:
    if name == "flavor":
        return record.runtime_class.flavor
    if name == "kind":
        return record.runtime_class.kind.value
    if name == "node":
        return record.node_id
    return str(getattr(record, name))


def select(records: Iterable[MetricsRecord], selector=None) -> list[MetricsRecord]:
    filters = parse_selector(selector)
    return [r for r in records if all(_field(r, k) == v for k, v in filters.items())]


@dataclass(frozen=True)
class Summary:
    count: int
    success_count: int
    failure_count: int
    stats: Mapping[str, Mapping[str, float]]

    def to_dict(self) -> dict[str, Any]:
        return {
            "count": self.count,
            "success_count": self.success_count,
            "failure_count": self.failure_count,
            "stats": {k: dict(v) for k, v in self.stats.items()},
        }


def summarize(records: Iterable[MetricsRecord], selector=None) -> Summary:
    """Count, mean, min and max per metric over the matching records.

    Failures are counted but left out of the statistics. With no successful
    match, ``stats`` is empty.
    """
    matched = select(records, selector)
    ok = [r for r in matched if r.ok]
    stats = {}
    if ok:
        for name in METRIC_FIELDS:
            values = [getattr(r, name) for r in ok]
            stats[name] = {"mean": sum(values) / len(values), "min": min(values), "max": max(values)}
    return Summary(len(matched), len(ok), len(matched) - len(ok), stats)


@dataclass(frozen=True)
class ComparisonReport:
    label_a: str
    label_b: str
    count_a: int
    count_b: int
    means_a: Mapping[str, float]
    means_b: Mapping[str, float]
    mem_saving_pct: float
    proc_time_delta_ms: float
    verdict: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "label_a": self.label_a,
            "label_b": self.label_b,
            "count_a": self.count_a,
            "count_b": self.count_b,
            "means_a": dict(self.means_a),
            "means_b": dict(self.means_b),
            "mem_saving_pct": self.mem_saving_pct,
            "proc_time_delta_ms": self.proc_time_delta_ms,
            "verdict": self.verdict,
        }

    def render(self) -> str:
        rows = [f"{'metric':<14}{'A: ' + self.label_a:>28}{'B: ' + self.label_b:>28}"]
        for name in METRIC_FIELDS:
            rows.append(f"{name:<14}{self.means_a[name]:>28.4f}{self.means_b[name]:>28.4f}")
        rows.append(f"{'records':<14}{self.count_a:>28}{self.count_b:>28}")
        rows.append(f"memory saving (B vs A): {self.mem_saving_pct:.2f} %")
        rows.append(f"processing time delta (B - A): {self.proc_time_delta_ms:+.3f} ms")
        rows.append(f"verdict: {self.verdict}")
        return "\n".join(rows)


def _verdict(saving: float, delta: float) -> str:
    lighter = "B lighter" if saving > 0 else "A lighter" if saving < 0 else "equal memory"
    faster = "A faster" if delta > 0 else "B faster" if delta < 0 else "equal speed"
    return f"{lighter}, {faster}"


def compare(records_a: Sequence[MetricsRecord], records_b: Sequence[MetricsRecord],
            label_a: str = "A", label_b: str = "B") -> ComparisonReport:
    """Compare mean usage of two record sets (successful records only).

    The memory saving is that of B relative to A; the time delta is B minus A.
    """
    ok_a = [r for r in records_a if r.ok]
    ok_b = [r for r in records_b if r.ok]
    if not ok_a:
        raise EmptySet("A")
    if not ok_b:
        raise EmptySet("B")
    means_a = {n: sum(getattr(r, n) for r in ok_a) / len(ok_a) for n in METRIC_FIELDS}
    means_b = {n: sum(getattr(r, n) for r in ok_b) / len(ok_b) for n in METRIC_FIELDS}
    saving = mem_saving_pct(means_a["mem_peak_mb"], means_b["mem_peak_mb"])
    delta = means_b["proc_time_ms"] - means_a["proc_time_ms"]
    return ComparisonReport(label_a, label_b, len(ok_a), len(ok_b), means_a, means_b,
                            saving, delta, _verdict(saving, delta))
