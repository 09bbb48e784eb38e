"""Calibration registry: the (flavor, app_class) -> ResourceProfile table.

The shipped defaults come from the measurements reported for the Raspberry Pi 4
testbed. Where a figure was reported as a range, the profile stores the
midpoint as the mean and the half-width as the spread. Fields nobody measured
are filled from the docker entry for the same application (or a placeholder
when docker was not measured either) and flagged as uncalibrated.

Profile documents are keyed by flavor, then app class::

    unikraft:
      StreamAggregate: {cpu_pct_mean: 0.17, mem_mb_mean: 45}
    myvm:
      kind: unikernel
      StreamAggregate: {cpu_pct_mean: 0.2, cpu_pct_spread: 0, ...}

Partial entries are merged onto the existing profile; new entries need all
seven fields.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from .errors import ParseError, UnknownProfile
from .model import (
    APP_CLASSES,
    BODY_DETECT,
    CAR_DETECT,
    FACE_DETECT,
    OBJECT_DETECT,
    OTHER,
    STREAM_AGGREGATE,
    ResourceProfile,
    RuntimeKind,
)

CONTAINER_FLAVORS = ("docker", "podman", "singularity")
UNIKERNEL_FLAVORS = ("unikraft", "osv", "nanos")
DEFAULT_FLAVOR_KINDS = {
    **{f: RuntimeKind.CONTAINER for f in CONTAINER_FLAVORS},
    **{f: RuntimeKind.UNIKERNEL for f in UNIKERNEL_FLAVORS},
}
DEFAULT_BOOT_MS = {RuntimeKind.CONTAINER: 300.0, RuntimeKind.UNIKERNEL: 50.0}

PROFILE_FIELDS = tuple(f.name for f in dataclasses.fields(ResourceProfile))


def _range(lo: float, hi: float) -> tuple[float, float]:
    return (lo + hi) / 2, (hi - lo) / 2


_uk_cpu, _uk_cpu_s = _range(0.17, 0.20)
_uk_mem, _uk_mem_s = _range(45, 48)
_uk_time, _uk_time_s = _range(2.0, 2.1)
_osv_cpu, _osv_cpu_s = _range(0.19, 0.26)
_nanos_cpu, _nanos_cpu_s = _range(0.19, 0.24)
_cv_mem, _cv_mem_s = _range(90, 96)
_body_mem, _body_mem_s = _range(80, 84)

# Measured values only. Face/car/body memory ranges and the car/face/body
# processing times were reported for containers in general, so every container
# flavor gets them.
_MEASURED: dict[tuple[str, str], dict[str, float]] = {
    ("docker", STREAM_AGGREGATE): {"cpu_pct_mean": 0.29, "mem_mb_mean": 71.0, "proc_time_ms_mean": 1.7},
    ("singularity", STREAM_AGGREGATE): {"proc_time_ms_mean": 1.503},
    ("unikraft", STREAM_AGGREGATE): {
        "cpu_pct_mean": _uk_cpu, "cpu_pct_spread": _uk_cpu_s,
        "mem_mb_mean": _uk_mem, "mem_mb_spread": _uk_mem_s,
        "proc_time_ms_mean": _uk_time, "proc_time_ms_spread": _uk_time_s,
    },
    ("osv", STREAM_AGGREGATE): {
        "cpu_pct_mean": _osv_cpu, "cpu_pct_spread": _osv_cpu_s,
        "mem_mb_mean": 55.0, "proc_time_ms_mean": 2.5,
    },
    ("nanos", STREAM_AGGREGATE): {
        "cpu_pct_mean": _nanos_cpu, "cpu_pct_spread": _nanos_cpu_s, "mem_mb_mean": 50.0,
    },
    ("docker", CAR_DETECT): {"cpu_pct_mean": 26.0},
    ("docker", OBJECT_DETECT): {"proc_time_ms_mean": 1300.0},
}
for _flavor in CONTAINER_FLAVORS:
    for _app, _fields in (
        (FACE_DETECT, {"mem_mb_mean": _cv_mem, "mem_mb_spread": _cv_mem_s, "proc_time_ms_mean": 200.0}),
        (CAR_DETECT, {"mem_mb_mean": _cv_mem, "mem_mb_spread": _cv_mem_s, "proc_time_ms_mean": 120.0}),
        (BODY_DETECT, {"mem_mb_mean": _body_mem, "mem_mb_spread": _body_mem_s, "proc_time_ms_mean": 400.0}),
    ):
        _MEASURED.setdefault((_flavor, _app), {}).update(_fields)

# Stand-ins for quantities that were never reported. Always flagged uncalibrated.
_PLACEHOLDER: dict[str, dict[str, float]] = {
    FACE_DETECT: {"cpu_pct_mean": 26.0},
    BODY_DETECT: {"cpu_pct_mean": 26.0},
    OBJECT_DETECT: {"cpu_pct_mean": 90.0, "mem_mb_mean": 200.0},
    OTHER: {"cpu_pct_mean": 10.0, "mem_mb_mean": 64.0, "proc_time_ms_mean": 100.0},
}

# Bare-metal reference points; reported alongside comparisons, never scheduled.
NATIVE_REFERENCE = {("native", CAR_DETECT): {"cpu_pct_mean": 25.03, "mem_mb_mean": 79.0}}


def _default_table():
    profiles: dict[tuple[str, str], ResourceProfile] = {}
    uncalibrated: dict[tuple[str, str], tuple[str, ...]] = {}
    for flavor, kind in DEFAULT_FLAVOR_KINDS.items():
        for app in APP_CLASSES + (OTHER,):
            measured = _MEASURED.get((flavor, app), {})
            docker = _MEASURED.get(("docker", app), {})
            placeholder = _PLACEHOLDER.get(app, {})
            values: dict[str, float] = {}
            flagged = []
            for name in ("cpu_pct", "mem_mb", "proc_time_ms"):
                mean, spread = f"{name}_mean", f"{name}_spread"
                if mean in measured:
                    values[mean] = measured[mean]
                    values[spread] = measured.get(spread, 0.0)
                    continue
                source = docker if mean in docker else placeholder
                values[mean] = source[mean]
                values[spread] = source.get(spread, 0.0)
                flagged.append(mean)
            values["boot_ms"] = DEFAULT_BOOT_MS[kind]
            profiles[(flavor, app)] = ResourceProfile(**values)
            if flagged:
                uncalibrated[(flavor, app)] = tuple(flagged)
    return profiles, uncalibrated


@dataclass
class CalibrationRegistry:
    profiles: dict[tuple[str, str], ResourceProfile] = field(default_factory=dict)
    flavor_kinds: dict[str, RuntimeKind] = field(default_factory=dict)
    uncalibrated: dict[tuple[str, str], tuple[str, ...]] = field(default_factory=dict)

    @classmethod
    def default(cls) -> "CalibrationRegistry":
        profiles, uncalibrated = _default_table()
        return cls(profiles, dict(DEFAULT_FLAVOR_KINDS), uncalibrated)

    def lookup(self, flavor: str, app_class: str) -> ResourceProfile:
        """Profile for the pair; free-form app classes use the flavor's ``Other`` entry."""
        for key in ((flavor, app_class), (flavor, OTHER)):
            if key in self.profiles:
                return self.profiles[key]
        raise UnknownProfile(f"no calibration profile for {flavor}/{app_class}")

    def kind_of(self, flavor: str) -> RuntimeKind | None:
        return self.flavor_kinds.get(flavor)

    def flavors(self, kind: RuntimeKind | None = None) -> list[str]:
        return sorted(f for f, k in self.flavor_kinds.items() if kind is None or k == kind)

    def is_calibrated(self, flavor: str, app_class: str) -> bool:
        return (flavor, app_class) not in self.uncalibrated

    def with_overrides(self, doc: Mapping[str, Any] | None) -> "CalibrationRegistry":
        """Return a copy with the entries of a profile document merged in."""
        profiles = dict(self.profiles)
        kinds = dict(self.flavor_kinds)
        uncalibrated = dict(self.uncalibrated)
        if not doc:
            return CalibrationRegistry(profiles, kinds, uncalibrated)
        if not isinstance(doc, Mapping):
            raise ParseError("calibration document must be a mapping keyed by flavor")
        for flavor, entries in doc.items():
            if not isinstance(entries, Mapping):
                raise ParseError(f"calibration entry for {flavor!r} must be a mapping")
            entries = dict(entries)
            if "kind" in entries:
                kinds[flavor] = RuntimeKind(str(entries.pop("kind")).lower())
            if flavor not in kinds:
                raise ParseError(f"flavor {flavor!r} needs a 'kind' (container or unikernel)")
            for app, fields_ in entries.items():
                if not isinstance(fields_, Mapping):
                    raise ParseError(f"profile {flavor}/{app} must be a mapping")
                unknown = set(fields_) - set(PROFILE_FIELDS)
                if unknown:
                    raise ParseError(f"profile {flavor}/{app}: unknown fields {sorted(unknown)}")
                key = (flavor, app)
                base = profiles.get(key)
                if base is None:
                    missing = set(PROFILE_FIELDS) - set(fields_) - {"boot_ms"}
                    if missing:
                        raise ParseError(f"new profile {flavor}/{app} is missing {sorted(missing)}")
                    merged = {"boot_ms": DEFAULT_BOOT_MS[kinds[flavor]], **fields_}
                else:
                    merged = {**base.to_dict(), **fields_}
                try:
                    profiles[key] = ResourceProfile.from_dict(merged)
                except (TypeError, ValueError) as exc:
                    raise ParseError(f"profile {flavor}/{app}: {exc}") from None
                remaining = tuple(f for f in uncalibrated.get(key, ()) if f not in fields_)
                if remaining:
                    uncalibrated[key] = remaining
                else:
                    uncalibrated.pop(key, None)
        return CalibrationRegistry(profiles, kinds, uncalibrated)

    def to_document(self) -> dict[str, Any]:
        doc: dict[str, Any] = {}
        for (flavor, app), profile in sorted(self.profiles.items()):
            entry = doc.setdefault(flavor, {"kind": self.flavor_kinds[flavor].value})
            entry[app] = profile.to_dict()
        return doc


def load_registry(source: str | Path | Mapping[str, Any] | None = None,
                  base: CalibrationRegistry | None = None) -> CalibrationRegistry:
    """Build a registry from a profile file, a parsed document, or nothing (defaults)."""
    base = base or CalibrationRegistry.default()
    if source is None:
        return base
    if isinstance(source, Mapping):
        return base.with_overrides(source)
    text = Path(source).read_text()
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ParseError(f"invalid profile file {source}", mark.line + 1 if mark else None) from None
    return base.with_overrides(doc)
