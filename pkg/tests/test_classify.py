"""分类器的端到端检查"""
import pytest

from modcsp.classify import (
    VerdictKind, classify, classify_2element, classify_3element, classify_conservative, preprocess,
)
from modcsp.exceptions import ModulusError, PreconditionError
from modcsp.fixtures import load_structure
from modcsp.obstruction import verify_certificate
from modcsp.polyclone import operation_from_dict


def test_preprocess_neq2_mod_2_is_empty():
    prep = preprocess(load_structure("neq2"), 2)
    assert prep.structure.total_size == 0
    assert len(prep.trail["p_rigid_chain"]) == 1


def test_preprocess_adds_constants():
    prep = preprocess(load_structure("le2"), 2)
    assert prep.structure.constants_flag
    assert "c[D:0]" in prep.trail["constants_added"]


def test_neq2_short_circuits():
    verdict = classify(load_structure("neq2"), 2)
    assert verdict.kind == VerdictKind.POLY_TIME
    assert verdict.evidence["empty_after_reduction"]


def test_le2c_is_hard():
    verdict = classify_2element(load_structure("le2c"), 2)
    assert verdict.kind == VerdictKind.SHARP_P_HARD
    assert verdict.certificate.terminal == [[0, 1], [1, 1]]
    assert verify_certificate(verdict.certificate, verdict.subject, 2).ok
    assert verdict.to_dict()["verdict"] == "SharpPHard"


def test_affine_is_tractable():
    verdict = classify_2element(load_structure("affine2c"), 2)
    assert verdict.kind == VerdictKind.POLY_TIME
    assert verdict.budget_qualified
    subject = verdict.subject
    minority = operation_from_dict(verdict.evidence["minority"], subject.domains())
    assert minority.is_minority()
    assert minority.is_polymorphism_of(subject)


def test_two_element_precondition():
    with pytest.raises(PreconditionError):
        classify_2element(load_structure("le3c"), 2)
    with pytest.raises(PreconditionError):
        classify_3element(load_structure("le2c"), 2)


def test_conservative_open_case(small_budget):
    verdict = classify_conservative(load_structure("neq2c"), 3, small_budget)
    assert verdict.kind == VerdictKind.KNOWN_OPEN_CASE
    assert verdict.budget_qualified
    assert verdict.reason


def test_conservative_tractable_at_two(small_budget):
    verdict = classify_conservative(load_structure("neq2c"), 2, small_budget)
    assert verdict.kind == VerdictKind.POLY_TIME


def test_point_extension_is_hard():
    verdict = classify(load_structure("le2_point"), 2)
    assert verdict.kind == VerdictKind.SHARP_P_HARD
    assert verify_certificate(verdict.certificate, verdict.subject, 2).ok


def test_aff3_goes_through_polynomial():
    verdict = classify(load_structure("aff3"), 2)
    assert verdict.kind == VerdictKind.POLY_TIME
    assert verdict.evidence["source"] == "binary-polymorphisms"
    assert verdict.evidence["witness"][0] == "D"
    minority = operation_from_dict(verdict.evidence["reduced"]["minority"], verdict.subject.domains())
    assert minority.is_minority()


def test_verdict_serialization():
    verdict = classify(load_structure("le2c"), 2)
    payload = verdict.to_dict()
    assert payload["modulus"] == 2
    assert payload["subject_digest"] == verdict.subject.digest()
    assert set(payload["budgets"]) == {"closure", "gadget"}
    assert payload["certificate"]["terminal"] == [[0, 1], [1, 1]]


def test_bad_modulus():
    with pytest.raises(ModulusError):
        classify(load_structure("le2c"), 6)
