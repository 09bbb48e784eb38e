import pytest
from hypothesis import given
from hypothesis import strategies as st

from hybridedge.calibration import CalibrationRegistry
from hybridedge.classifier import (
    CONTAINER_ONLY_RULES,
    DEFAULT_RULES,
    ClassificationRule,
    check_rules,
    classify,
    load_rules,
    resolve_rules,
)
from hybridedge.errors import InvalidRuleTable, MissingCatchAll, ParseError, UnknownFlavor
from hybridedge.model import RuntimeClass, RuntimeKind

from helpers import DOCKER, UNIKRAFT, vspec

KINDS = CalibrationRegistry.default().flavor_kinds


def test_default_table_examples():
    assert classify(vspec(kind="stream"), DEFAULT_RULES) == UNIKRAFT
    assert classify(vspec(kind="image"), DEFAULT_RULES) == DOCKER
    assert classify(vspec(kind="audio"), DEFAULT_RULES) == DOCKER
    assert classify(vspec(kind="stream"), CONTAINER_ONLY_RULES) == DOCKER


@given(st.text(max_size=8), st.sampled_from(["image", "stream", "audio"]))
def test_first_match_wins(app_class, kind):
    rules = check_rules((
        ClassificationRule(RuntimeClass(RuntimeKind.UNIKERNEL, "osv"), app_class="Special"),
        *DEFAULT_RULES,
    ), KINDS)
    spec = vspec(kind=kind, app_class=app_class or None)
    got = classify(spec, rules)
    if spec.app_class == "Special":
        assert got.flavor == "osv"
    else:
        assert got == classify(spec, DEFAULT_RULES)


def test_check_rules_errors():
    with pytest.raises(MissingCatchAll):
        check_rules((ClassificationRule(DOCKER, payload_kind="image"),))
    with pytest.raises(InvalidRuleTable):
        check_rules((ClassificationRule(DOCKER), ClassificationRule(DOCKER, payload_kind="image")))
    with pytest.raises(UnknownFlavor):
        check_rules((ClassificationRule(RuntimeClass(RuntimeKind.CONTAINER, "lxc")),), KINDS)
    with pytest.raises(InvalidRuleTable):
        check_rules((ClassificationRule(RuntimeClass(RuntimeKind.CONTAINER, "unikraft")),), KINDS)


def test_load_rules_document():
    text = """
rules:
  - {payload_kind: stream, kind: unikernel, flavor: nanos}
  - {kind: container, flavor: podman}
"""
    rules = load_rules(text, KINDS)
    assert classify(vspec(kind="stream"), rules).flavor == "nanos"
    assert classify(vspec(kind="image"), rules).flavor == "podman"
    assert load_rules("") == DEFAULT_RULES
    assert load_rules("rules: container-only") == CONTAINER_ONLY_RULES


def test_load_rules_reports_line():
    with pytest.raises(ParseError) as info:
        load_rules("rules:\n  - {kind: container\n")
    assert info.value.line is not None


def test_resolve_rules():
    assert resolve_rules(None) == DEFAULT_RULES
    assert resolve_rules("container-only") == CONTAINER_ONLY_RULES
    with pytest.raises(ParseError):
        resolve_rules("nonsense")
    assert [r.to_dict() for r in resolve_rules([r.to_dict() for r in DEFAULT_RULES], KINDS)] == \
        [r.to_dict() for r in DEFAULT_RULES]
