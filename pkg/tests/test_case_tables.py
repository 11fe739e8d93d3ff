"""案例表校验的测试"""
import json

import pytest

from modcsp.case_tables import (
    POINTS, TableRow, accept_table, binary_clone_contains, check_square_row, load_case_tables, mirror_row,
    table_rows, target_operation, term_library, verify_case_tables,
)
from modcsp.exceptions import StructureError


@pytest.fixture(scope="module")
def report():
    return verify_case_tables(n_jobs=1)


def test_no_table_row_fails(report):
    assert report.rows
    assert report.summary.get("fail", 0) == 0
    assert all(check.completions >= 0 for check in report.rows)


def test_square_table_rows(report):
    assert len(report.square_rows) == 3
    assert all(check.status != "fail" for check in report.square_rows)


def test_report_is_json_serializable(report):
    payload = json.loads(json.dumps(report.to_dict()))
    assert set(payload) == {"summary", "rows", "square_table"}


def test_mirrors_are_included():
    payload = load_case_tables()
    plain = table_rows(payload, include_mirrors=False)
    mirrored = table_rows(payload, include_mirrors=True)
    assert len(mirrored) > len(plain)
    assert all(not row.mirror for row in plain)


def test_mirror_row_reverses_triples_and_swaps_outer_components():
    row = TableRow("t", 1, {"012": "210"}, "f1(y,f3(x,y))")
    mirrored = mirror_row(row)
    assert mirrored.images == {"210": "012"}
    assert mirrored.term == "f3(y,f1(x,y))"
    assert mirrored.mirror


def test_acceptance_modes():
    target = target_operation()
    assert accept_table(target, target) == "xy"
    transposed = {(x, y): target[(y, x)] for x, y in POINTS}
    assert accept_table(transposed, target) == "yx"
    first = {(x, y): x for x, y in POINTS}
    assert accept_table(first, target) is None
    assert binary_clone_contains(target, target)
    assert not binary_clone_contains(first, target)


def test_square_row_swapped_reading():
    payload = load_case_tables()
    table = payload["square_table"]
    checks = check_square_row(3, table["rows"][2], table)
    by_reading = {c.acceptance[0]: c.status for c in checks if c.acceptance}
    assert by_reading.get("swapped") == "pass"


def test_term_library_is_deduplicated():
    library = term_library()
    terms = [term for _, _, term in library]
    assert len(terms) == len(set(terms))
    assert library[0][:2] == ("2.1", 1)


def test_missing_table_file(tmp_path):
    with pytest.raises(StructureError):
        load_case_tables(str(tmp_path / "missing.json"))
    broken = tmp_path / "broken.json"
    broken.write_text("{", encoding="utf-8")
    with pytest.raises(StructureError):
        load_case_tables(str(broken))


def test_ambiguous_rows_are_reported_tentative(report):
    marked = [row for row in table_rows(load_case_tables()) if row.interpretation == "tentative"]
    assert len(marked) == 9
    keys = {(row.table, row.index, row.mirror): row.note for row in marked}
    checks = [c for c in report.rows if (c.table, c.row, c.mirror) in keys]
    assert len(checks) == len(marked)
    for check in checks:
        assert check.status in ("tentative", "pass")
        if check.status == "tentative":
            assert check.note


def test_mirror_row_keeps_interpretation():
    row = TableRow("t", 1, {"202": "201"}, "f1", interpretation="tentative", note="ambiguous")
    mirrored = mirror_row(row)
    assert mirrored.interpretation == "tentative"
    assert mirrored.note == "ambiguous"
