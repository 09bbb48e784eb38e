"""Application-aware routing of workloads to a runtime class.

A rule table is an ordered list; the first rule whose present fields all equal
the workload's fields wins. The last rule must be the single catch-all (no match
fields), so classification is total.

Rule documents (YAML or JSON) are a list of mappings, optionally wrapped in a
``rules:`` key::

    - {payload_kind: image, kind: container, flavor: docker}
    - {payload_kind: stream, kind: unikernel, flavor: unikraft}
    - {kind: container, flavor: docker}
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Iterable, Mapping, Sequence

import yaml

from .errors import InvalidRuleTable, MissingCatchAll, ParseError, UnknownFlavor
from .model import IMAGE, STREAM, RuntimeClass, RuntimeKind, ValidatedSpec

DEFAULT_CONTAINER = RuntimeClass(RuntimeKind.CONTAINER, "docker")
DEFAULT_UNIKERNEL = RuntimeClass(RuntimeKind.UNIKERNEL, "unikraft")


@dataclass(frozen=True)
class ClassificationRule:
    target: RuntimeClass
    payload_kind: str | None = None
    app_class: str | None = None

    @property
    def is_catch_all(self) -> bool:
        return self.payload_kind is None and self.app_class is None

    def matches(self, spec: ValidatedSpec) -> bool:
        if self.payload_kind is not None and self.payload_kind != spec.payload_kind:
            return False
        if self.app_class is not None and self.app_class != spec.app_class:
            return False
        return True

    def to_dict(self) -> dict[str, Any]:
        doc: dict[str, Any] = {}
        if self.payload_kind is not None:
            doc["payload_kind"] = self.payload_kind
        if self.app_class is not None:
            doc["app_class"] = self.app_class
        doc["kind"] = self.target.kind.value
        doc["flavor"] = self.target.flavor
        return doc


DEFAULT_RULES: tuple[ClassificationRule, ...] = (
    ClassificationRule(DEFAULT_CONTAINER, payload_kind=IMAGE),
    ClassificationRule(DEFAULT_UNIKERNEL, payload_kind=STREAM),
    ClassificationRule(DEFAULT_CONTAINER),
)

# Baseline for comparisons: everything runs in containers.
CONTAINER_ONLY_RULES: tuple[ClassificationRule, ...] = (ClassificationRule(DEFAULT_CONTAINER),)

RULE_PRESETS = {"default": DEFAULT_RULES, "container-only": CONTAINER_ONLY_RULES}


def classify(spec: ValidatedSpec, rules: Sequence[ClassificationRule]) -> RuntimeClass:
    for rule in rules:
        if rule.matches(spec):
            return rule.target
    # Only reachable with a table that skipped check_rules.
    raise MissingCatchAll("rule table has no catch-all")


def check_rules(rules: Sequence[ClassificationRule],
                flavor_kinds: Mapping[str, RuntimeKind] | None = None) -> tuple[ClassificationRule, ...]:
    """Validate a rule table; returns it as a tuple."""
    rules = tuple(rules)
    catch_alls = [i for i, r in enumerate(rules) if r.is_catch_all]
    if not catch_alls:
        raise MissingCatchAll("rule table needs a final rule with no match fields")
    if len(catch_alls) > 1 or catch_alls[0] != len(rules) - 1:
        raise InvalidRuleTable("exactly one catch-all rule is allowed and it must be last")
    if flavor_kinds is not None:
        for rule in rules:
            kind = flavor_kinds.get(rule.target.flavor)
            if kind is None:
                raise UnknownFlavor(f"flavor {rule.target.flavor!r} is not registered")
            if kind != rule.target.kind:
                raise InvalidRuleTable(
                    f"flavor {rule.target.flavor!r} is a {kind.value}, not a {rule.target.kind.value}"
                )
    return rules


def rule_from_dict(doc: Mapping[str, Any]) -> ClassificationRule:
    unknown = set(doc) - {"payload_kind", "app_class", "kind", "flavor"}
    if unknown:
        raise ValueError(f"unknown rule fields {sorted(unknown)}")
    if "kind" not in doc or "flavor" not in doc:
        raise ValueError("rule needs 'kind' and 'flavor'")
    return ClassificationRule(
        target=RuntimeClass(RuntimeKind(str(doc["kind"]).lower()), str(doc["flavor"])),
        payload_kind=doc.get("payload_kind"),
        app_class=doc.get("app_class"),
    )


def rules_from_list(items: Iterable[Mapping[str, Any]],
                    flavor_kinds: Mapping[str, RuntimeKind] | None = None) -> tuple[ClassificationRule, ...]:
    rules = []
    for index, item in enumerate(items):
        if not isinstance(item, Mapping):
            raise ParseError(f"rule {index} is not a mapping")
        try:
            rules.append(rule_from_dict(item))
        except ValueError as exc:
            raise ParseError(f"rule {index}: {exc}") from None
    return check_rules(rules, flavor_kinds)


def load_rules(document: str | None,
               flavor_kinds: Mapping[str, RuntimeKind] | None = None) -> tuple[ClassificationRule, ...]:
    """Parse a rule document. An absent or empty document yields :data:`DEFAULT_RULES`."""
    if document is None or not document.strip():
        return DEFAULT_RULES
    try:
        doc = yaml.safe_load(document)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ParseError(f"invalid rule document: {getattr(exc, 'problem', exc)}",
                         mark.line + 1 if mark else None) from None
    if isinstance(doc, Mapping):
        doc = doc.get("rules")
    if doc is None:
        return DEFAULT_RULES
    if isinstance(doc, str) and doc in RULE_PRESETS:
        return RULE_PRESETS[doc]
    if not isinstance(doc, list):
        raise ParseError("rule document must be a list of rules")
    return rules_from_list(doc, flavor_kinds)


def resolve_rules(value: Any, flavor_kinds: Mapping[str, RuntimeKind] | None = None) -> tuple[ClassificationRule, ...]:
    """Rules from an already-parsed config value: ``None``, a preset name, or a list."""
    if value is None:
        return DEFAULT_RULES
    if isinstance(value, str):
        if value not in RULE_PRESETS:
            raise ParseError(f"unknown rule preset {value!r}; known: {sorted(RULE_PRESETS)}")
        return RULE_PRESETS[value]
    if not isinstance(value, list):
        raise ParseError("rules must be a preset name or a list")
    return rules_from_list(value, flavor_kinds)
