"""障碍证书的构造、序列化与独立重放"""
import copy
import json
from types import SimpleNamespace

import pytest

from modcsp.classify import VerdictKind, classify
from modcsp.exceptions import PreconditionError, StructureError
from modcsp.fixtures import HARD_FIXTURES, load_structure
from modcsp.mpp import MaltsevUpToBudget, NoMaltsevForHItself, maltsev_for_closure
from modcsp.obstruction import (
    Deriver, GadgetWitness, ObstructionCertificate, ObstructionState, StuckReport, base_from_verdict,
    build_obstruction, conservative_obstruction, eliminate_coordinate, extension_sets, find_gadget,
    three_element_obstruction, two_element_reduce, verify_certificate,
)


@pytest.fixture(scope="module")
def hard_verdicts():
    return {name: classify(load_structure(name), 2) for name in HARD_FIXTURES}


def _round_trip(certificate: ObstructionCertificate) -> dict:
    return json.loads(json.dumps(certificate.to_dict()))


@pytest.mark.parametrize("name", HARD_FIXTURES)
def test_hard_fixture_certificates_replay(hard_verdicts, name):
    verdict = hard_verdicts[name]
    assert verdict.kind == VerdictKind.SHARP_P_HARD
    certificate = verdict.certificate
    assert certificate.terminal == [[0, 1], [1, 1]]
    assert verify_certificate(certificate, verdict.subject, 2)
    restored = ObstructionCertificate.from_dict(_round_trip(certificate))
    assert restored.to_dict() == certificate.to_dict()
    assert verify_certificate(restored, verdict.subject, 2).ok


@pytest.mark.parametrize("name", HARD_FIXTURES)
@pytest.mark.parametrize("mutation", ["digest", "final", "modulus", "terminal", "formula_digest"])
def test_mutated_certificates_fail(hard_verdicts, name, mutation):
    verdict = hard_verdicts[name]
    payload = copy.deepcopy(_round_trip(verdict.certificate))
    if mutation == "digest":
        payload["structure_digest"] = "0" * 32
    elif mutation == "final":
        payload["final_tuples"] = payload["final_tuples"][:-1]
    elif mutation == "modulus":
        payload["modulus"] = 4
    elif mutation == "terminal":
        payload["terminal"] = [[1, 1], [1, 1]]
    else:
        payload["initial_formula_digest"] = "f" * 32
    check = verify_certificate(ObstructionCertificate.from_dict(payload), verdict.subject, 2)
    assert not check
    assert check.divergence


def test_le2c_direct_route():
    h = load_structure("le2c")
    certificate = build_obstruction(h, 2, h.digest(), route="two-element")
    assert isinstance(certificate, ObstructionCertificate)
    assert certificate.route == "two-element+direct"
    assert certificate.terminal == [[0, 1], [1, 1]]
    assert len(certificate.final_tuples) == 3
    assert verify_certificate(certificate, h, 2).ok


def test_certificate_is_bound_to_its_structure():
    h = load_structure("le2c")
    certificate = build_obstruction(h, 2, h.digest())
    check = verify_certificate(certificate, load_structure("neq2c"), 2)
    assert not check.ok


@pytest.fixture(scope="module")
def elimination_certificates():
    certificates = {}
    for name in HARD_FIXTURES:
        h = load_structure(name)
        base, killers = base_from_verdict(h, maltsev_for_closure(h, 2))
        certificates[name] = (h, build_obstruction(base, 2, h.digest(), killers, direct=False))
    return certificates


@pytest.mark.parametrize("name", HARD_FIXTURES)
def test_elimination_route_reaches_terminal(elimination_certificates, name):
    h, certificate = elimination_certificates[name]
    assert isinstance(certificate, ObstructionCertificate), certificate.to_dict()
    assert not certificate.route.endswith("+direct")
    assert certificate.steps
    assert certificate.terminal == [[0, 1], [1, 1]]
    assert verify_certificate(certificate, h, 2).ok
    restored = ObstructionCertificate.from_dict(_round_trip(certificate))
    assert verify_certificate(restored, h, 2).ok


@pytest.mark.parametrize("name", HARD_FIXTURES)
def test_step_digest_mutation_fails(elimination_certificates, name):
    h, certificate = elimination_certificates[name]
    payload = _round_trip(certificate)
    payload["steps"][-1]["digest"] = "0" * 32
    check = verify_certificate(ObstructionCertificate.from_dict(payload), h, 2)
    assert not check
    assert "结果不一致" in check.divergence


def test_certificate_checked_against_requested_modulus():
    h = load_structure("le2c")
    certificate = build_obstruction(h, 2, h.digest())
    check = verify_certificate(certificate, h, 3)
    assert not check.ok
    assert "模数" in check.divergence
    assert not verify_certificate(certificate, h, 4).ok


def test_no_direct_no_elimination_is_stuck():
    h = load_structure("le2c")
    report = build_obstruction(h, 2, h.digest(), direct=False, eliminate=False)
    assert isinstance(report, StuckReport)
    assert report.phase == "direct"
    assert report.to_dict()["kind"] == "stuck"


def test_maltsev_base_has_no_obstruction():
    h = load_structure("affine2c")
    with pytest.raises(PreconditionError):
        build_obstruction(h, 2, h.digest(), direct=False)


def test_preconditions(small_budget):
    with pytest.raises(PreconditionError):
        conservative_obstruction(load_structure("neq2"), 2, small_budget)
    with pytest.raises(PreconditionError):
        three_element_obstruction(load_structure("le2c_neq2c"), 2, small_budget)
    affine = load_structure("affine2c")
    verdict = maltsev_for_closure(affine, 2, small_budget)
    assert isinstance(verdict, MaltsevUpToBudget)
    with pytest.raises(PreconditionError):
        base_from_verdict(affine, verdict)


def test_malformed_certificate_payload():
    with pytest.raises(StructureError):
        ObstructionCertificate.from_dict({"modulus": 2})


def _state(rows, right):
    coords = {cid: ("D", ()) for cid in range(1 + len(right))}
    return ObstructionState(coords, sorted(coords), frozenset(rows), [0], list(right),
                            {0: "1"}, {0: "0"}, {cid: "0" for cid in right}, {cid: "1" for cid in right})


def test_two_element_reduce_binary_is_unchanged(small_budget):
    h = load_structure("le2c")
    state = _state(h.relation("R").tuples, [1])
    deriver = Deriver(h, 2, small_budget, None, 1)
    assert two_element_reduce(state, deriver) is None
    assert deriver.steps == []
    assert state.rows == h.relation("R").tuple_set


def test_two_element_reduce_merges_copied_coordinate(small_budget):
    h = load_structure("le2c")
    # 第三个坐标是第二个的副本
    rows = [(x, y, y) for x, y in h.relation("R").tuples]
    state = _state(rows, [1, 2])
    deriver = Deriver(h, 2, small_budget, None, 1)
    assert two_element_reduce(state, deriver) is None
    assert [step.rule for step in deriver.steps] == ["quantify"]
    assert len(state.ids) == 2
    assert state.rows == h.relation("R").tuple_set


# le2c 的 R 上 α=1, β=0, γ=0, δ=1；第二、三个坐标都在右侧
PINNABLE = [("1", "0", "0"), ("0", "0", "0"), ("0", "1", "1"), ("1", "1", "0"), ("0", "1", "0")]


def test_extension_sets():
    state = _state(PINNABLE, [1, 2])
    assert extension_sets(state, 1) == (frozenset("01"), frozenset("01"), frozenset("1"))
    assert extension_sets(state, 2) == (frozenset("0"), frozenset("0"), frozenset("01"))


def test_two_element_reduce_pins_common_element(small_budget):
    h = load_structure("le2c")
    state = _state(PINNABLE, [1, 2])
    deriver = Deriver(h, 2, small_budget, None, 1)
    assert two_element_reduce(state, deriver) is None
    assert [step.rule for step in deriver.steps] == ["pin"]
    assert deriver.steps[0].detail == {"value": "1"}
    assert state.rows == h.relation("R").tuple_set


def test_two_element_reduce_quantifies_first_for_odd_modulus(small_budget):
    h = load_structure("le2c")
    state = _state(PINNABLE, [1, 2])
    deriver = Deriver(h, 3, small_budget, None, 1)
    assert two_element_reduce(state, deriver) is None
    assert [step.rule for step in deriver.steps] == ["quantify"]
    assert state.rows == h.relation("R").tuple_set


def test_two_element_reduce_swaps_on_anchored_slice(small_budget):
    h = load_structure("le2c")
    rows = [(x, y, w) for x, y in h.relation("R").tuples for w in "01"]
    state = _state(rows, [1, 2])
    deriver = Deriver(h, 2, small_budget, None, 1)
    assert two_element_reduce(state, deriver) is None
    assert [step.rule for step in deriver.steps] == ["swap"]
    assert deriver.steps[0].detail["anchor"] == "gamma"
    assert state.right == [1]
    assert not state.swapped
    assert state.rows == h.relation("R").tuple_set


def test_stuck_report_carries_relation_and_b_sets(small_budget):
    # neq2 没有常量，固定与交换都不可用，两个坐标的量化都会丢掉 (β,γ)
    h = load_structure("neq2")
    rows = [("1", "0", "0"), ("0", "0", "0"), ("0", "1", "1"), ("0", "0", "1"), ("0", "1", "0")]
    state = _state(rows, [1, 2])
    report = two_element_reduce(state, Deriver(h, 2, small_budget, None, 1))
    assert isinstance(report, StuckReport)
    payload = json.loads(json.dumps(report.to_dict()))
    assert payload["phase"] == "two-element"
    assert payload["relation"]["coordinates"] == [["D"], ["D"], ["D"]]
    assert len(payload["relation"]["tuples"]) == 5
    assert payload["b_sets"] == [["0"], ["0", "1"], ["0", "1"]]


def test_find_gadget_single_vertex():
    h = load_structure("neq2")
    targets = (frozenset("0"), frozenset("1"), frozenset("0"))
    witness = find_gadget(h, 2, [], "D", targets, n_jobs=1)
    assert witness == GadgetWitness(("D",), (), (), (1, 1, 1))
    assert witness.verify(h, 2, [], targets)


def test_find_gadget_uses_pinned_vertex():
    h = load_structure("neq2")
    points = [("D", ("0", "0", "1"))]
    targets = (frozenset("01"),) * 3
    witness = find_gadget(h, 2, points, "D", targets, n_jobs=1)
    assert witness is not None
    assert witness.sorts == ("D", "D")
    assert witness.pins == ((1, 0),)
    assert witness.atoms == (("R", (0, 1)),)
    assert witness.counts == (1, 1, 1)
    assert witness.verify(h, 2, points, targets)
    assert not witness.verify(h, 2, points, (frozenset("0"),) * 3)
    assert json.loads(json.dumps(witness.to_dict()))["atoms"] == [["R", [0, 1]]]


def test_find_gadget_none_under_fixed_point_free_symmetry():
    # 交换 0 与 1 是 neq2 的自同构，不带定点时计数总是偶数
    h = load_structure("neq2")
    targets = (frozenset("01"),) * 3
    assert find_gadget(h, 2, [], "D", targets, {"max_vertices": 3, "max_atoms": 2}, n_jobs=1) is None


def test_three_element_prefers_automorphic_polynomial(monkeypatch, small_budget):
    polynomial = SimpleNamespace(table="3.1", row=1)
    monkeypatch.setattr("modcsp.obstruction.m_automorphisms",
                        lambda base, p: iter([SimpleNamespace(order=2)]))
    monkeypatch.setattr("modcsp.obstruction.polynomial_from_m_automorphism",
                        lambda structure, g, p: polynomial)

    def no_build(*args, **kwargs):
        raise AssertionError("不应进入坐标消去")

    monkeypatch.setattr("modcsp.obstruction.build_obstruction", no_build)
    result = three_element_obstruction(load_structure("k3c"), 2, small_budget, verdict=NoMaltsevForHItself())
    assert result.kind == "automorphic-polynomial"
    assert result.polynomial is polynomial


def test_eliminate_coordinate_falls_back_to_gadget(small_budget):
    # B₁={0}、B₂={0,1}、B₃={1}：量化丢掉 (β,γ)，neq2 没有常量也没有子代数
    h = load_structure("neq2")
    rows = [("1", "0", "0"), ("0", "0", "0"), ("0", "0", "1"), ("0", "1", "1")]
    coords = {cid: ("D", ()) for cid in range(3)}
    state = ObstructionState(coords, [0, 1, 2], frozenset(rows), [0], [1], {0: "1"}, {0: "0"}, {1: "0"}, {1: "1"})
    assert extension_sets(state, 2) == (frozenset("0"), frozenset("01"), frozenset("1"))
    deriver = Deriver(h, 2, small_budget, None, 1)
    assert eliminate_coordinate(state, 2, deriver) is None
    step, = deriver.steps
    assert step.rule == "gadget"
    assert step.detail["witness"]["pins"] == [[1, 0]]
    assert step.detail["witness"]["atoms"] == [["R", [0, 1]]]
    assert state.ids == [0, 1]
    assert state.rows == frozenset({("1", "0"), ("0", "0"), ("0", "1")})
