"""p-mpp 公式求值、闭包搜索、p-保守性与 Mal'tsev 精化的测试"""
import pytest

from config.search_config import search_config
from config.settings import settings
from modcsp.exceptions import PreconditionError, StructureError
from modcsp.fixtures import load_formula, load_structure
from modcsp.mpp import (
    Atom, ClosureBudget, MaltsevUpToBudget, MppFormula, NoMaltsevForHItself, build_H_dagger, closure_search,
    eval_mpp, evaluate_formula, ext_counts, formula_from_dict, is_p_conservative, is_strict, maltsev_for_closure,
    p_subalgebras, pr_p, require_no_maltsev,
)
from modcsp.polyclone import OperationTable


@pytest.fixture
def medium_budget():
    return ClosureBudget(max_atoms=2, max_free_arity=2, max_depth=1, max_size=4096, max_relations=200)


def test_exists_neighbour_counts_mod_p():
    formula = load_formula("exists_neighbour")
    relation, strict = evaluate_formula(formula, load_structure("neq2"), 2)
    assert relation.tuples == (("0",), ("1",))
    assert strict
    assert eval_mpp(formula, load_structure("le2"), 2).tuples == (("1",),)
    relation, strict = evaluate_formula(formula, load_structure("le2"), 3)
    assert relation.tuples == (("0",), ("1",))
    assert not strict
    assert not is_strict(formula, load_structure("le2"), 3)


def test_quantifier_free_formula_is_the_relation():
    h = load_structure("le3c")
    formula = MppFormula((("x", "D"), ("y", "D")), (), (Atom("LE", ("x", "y")),))
    assert eval_mpp(formula, h, 2).tuple_set == h.relation("LE").tuple_set


def test_equality_atom():
    h = load_structure("le3c")
    formula = MppFormula((("x", "D"), ("y", "D")), (), (Atom("=", ("x", "y")),))
    assert eval_mpp(formula, h, 5).tuples == (("0", "0"), ("1", "1"), ("2", "2"))


def test_nested_blocks():
    h = load_structure("le3c")
    # ∃^{≡2} y ∃^{≡2} z [LE(x,y) ∧ LE(y,z)]: 内层计数 3-y，外层再按奇偶计数
    formula = MppFormula((("x", "D"),), ((("y", "D"),), (("z", "D"),)),
                         (Atom("LE", ("x", "y")), Atom("LE", ("y", "z"))))
    # 内层: y=0 → 3 (奇), y=1 → 2 (偶), y=2 → 1 (奇)；外层: x=0 → {0,2} 偶, x=1 → {2} 奇, x=2 → {2} 奇
    assert eval_mpp(formula, h, 2).tuples == (("1",), ("2",))


def test_formula_errors():
    h = load_structure("le3c")
    with pytest.raises(StructureError):
        eval_mpp(MppFormula((("x", "D"),), (), (Atom("LE", ("x", "w")),)), h, 2)
    with pytest.raises(StructureError):
        eval_mpp(MppFormula((("x", "D"),), (), (Atom("LE", ("x",)),)), h, 2)
    with pytest.raises(StructureError):
        eval_mpp(MppFormula((("x", "D"),), ((("x", "D"),),), ()), h, 2)


def test_formula_dict_formats():
    nested = {"free": [{"var": "x", "sort": "D"}], "blocks": [[{"var": "y", "sort": "D"}]],
              "atoms": [{"relation": "R", "scope": ["x", "y"]}]}
    formula = formula_from_dict(nested)
    assert formula_from_dict(formula.to_dict()) == formula
    assert formula.depth == 1
    assert formula.atom_count == 1


def test_projection_and_extension_counts():
    le = load_structure("le2").relation("R")
    assert pr_p(le, [0], 2).tuples == (("1",),)
    assert pr_p(le, [0], 3).tuples == (("0",), ("1",))
    assert ext_counts(le, ("0",), [0], 2) == (2, 0)
    assert ext_counts(le, ("1",), [0], 2) == (1, 1)


def test_budget_overrides():
    budget = ClosureBudget.from_config(max_atoms=2, max_depth=None)
    assert budget.max_atoms == 2
    assert budget.max_depth == search_config.CLOSURE_BUDGET['max_depth']
    assert set(budget.to_dict()) == {"max_atoms", "max_free_arity", "max_depth", "max_size", "max_relations"}


def test_closure_relations_replay(small_budget):
    h = load_structure("le2c")
    result = closure_search(h, 2, small_budget)
    assert result.relations
    for defined in result.relations:
        assert defined.structure_digest == h.digest()
        replay = eval_mpp(defined.formula, h, 2)
        assert replay.sort_type == defined.relation.sort_type
        assert replay.tuple_set == defined.relation.tuple_set
        assert defined.atoms <= small_budget.max_atoms
        assert defined.depth <= small_budget.max_depth


def test_closure_budget_exhaustion():
    budget = ClosureBudget(max_atoms=2, max_free_arity=2, max_depth=1, max_size=4096, max_relations=5)
    result = closure_search(load_structure("le3c"), 2, budget)
    assert result.status == "budget-exhausted"
    assert len(result.relations) == 5


def test_closure_is_deterministic(small_budget):
    h = load_structure("le3c")
    first = closure_search(h, 2, small_budget)
    second = closure_search(h, 2, small_budget)
    assert [d.formula for d in first.relations] == [d.formula for d in second.relations]


def test_le3c_is_conservative(medium_budget):
    h = load_structure("le3c")
    result = is_p_conservative(h, 2, medium_budget)
    assert result.status == "certified-yes"
    assert not result.missing
    for subset, defined in result.subalgebras["D"]:
        assert {t[0] for t in eval_mpp(defined.formula, h, 2).tuples} == set(subset)
    found = {subset for subset, _ in p_subalgebras(h, 2, medium_budget)["D"]}
    assert frozenset({"0", "2"}) in found


def test_neq2_singletons_are_not_definable(small_budget):
    result = is_p_conservative(load_structure("neq2"), 2, small_budget)
    assert result.status == "unknown"
    assert result.missing["D"] == [frozenset({"0"}), frozenset({"1"})]


def test_maltsev_for_closure_verdicts(small_budget):
    verdict = maltsev_for_closure(load_structure("le2c"), 2, small_budget)
    assert isinstance(verdict, NoMaltsevForHItself)
    require_no_maltsev(verdict)

    verdict = maltsev_for_closure(load_structure("affine2c"), 2, small_budget)
    assert isinstance(verdict, MaltsevUpToBudget)
    assert verdict.candidate.is_maltsev()
    assert verdict.kind == "maltsev-up-to-budget"
    with pytest.raises(PreconditionError):
        require_no_maltsev(verdict)


def test_dagger_kills_are_real(small_budget):
    h = load_structure("le2c")
    dagger = build_H_dagger(h, 2, small_budget)
    domains = h.domains()
    projections = {OperationTable.projection(domains, 3, k) for k in range(3)}
    assert projections <= set(dagger.survivors)
    for f, name in dagger.kill_list:
        if name is not None:
            assert f.preserves(dagger.structure.relation(name)) is not None
    assert [name for name, _ in dagger.killers] == [f"q{k}" for k in range(len(dagger.killers))]


def test_skipped_kill_checks_are_reported(monkeypatch, small_budget):
    monkeypatch.setattr(settings, "KILL_CHECK_MAX_TUPLES", 0)
    verdict = maltsev_for_closure(load_structure("affine2c"), 2, small_budget)
    assert isinstance(verdict, MaltsevUpToBudget)
    assert verdict.limitations
    assert all("未检查保持性" in note for note in verdict.limitations)
    assert len(verdict.limitations) == len(set(verdict.limitations))

    dagger = build_H_dagger(load_structure("le2c"), 2, small_budget)
    assert dagger.limitations


def test_no_limitations_under_default_cap(small_budget):
    verdict = maltsev_for_closure(load_structure("affine2c"), 2, small_budget)
    assert verdict.limitations == []
