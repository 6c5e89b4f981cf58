from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from adcritic.core import StructKind, StructuredData
from adcritic.errors import ParseError
from adcritic.linearize import LinearizedText, delinearize, linearize


def test_kg_triple_line():
    s = StructuredData.kg([("house", "hasBedrooms", "3")])
    assert linearize(s).text == "house | hasBedrooms | 3"


def test_table_pair_line():
    s = StructuredData.table([("color", "mint green")])
    assert linearize(s).text == "color: mint green"


def test_pipe_escaped_in_fields():
    s = StructuredData.kg([("a", "r", "x|y")])
    assert linearize(s).text == "a | r | x\\|y"


def test_colon_escaped_in_fields():
    s = StructuredData.table([("ratio", "2:1")])
    assert linearize(s).text == "ratio: 2\\:1"


def test_delinearize_kg():
    t = LinearizedText(text="house | hasBedrooms | 3", kind=StructKind.KG)
    assert delinearize(t) == StructuredData.kg([("house", "hasBedrooms", "3")])


def test_delinearize_table():
    t = LinearizedText(text="color: mint green", kind=StructKind.TABLE)
    assert delinearize(t) == StructuredData.table([("color", "mint green")])


def test_delinearize_arity_violation():
    t = LinearizedText(text="house | hasBedrooms", kind=StructKind.KG)
    with pytest.raises(ParseError):
        delinearize(t)


def test_delinearize_rejects_unknown_escape():
    t = LinearizedText(text="a | r | x\\qy", kind=StructKind.KG)
    with pytest.raises(ParseError):
        delinearize(t)


def test_order_preserved():
    rows = [("b", "r2", "2"), ("a", "r1", "1")]
    s = StructuredData.kg(rows)
    assert delinearize(linearize(s)).rows == tuple(rows)


# Fields may contain every separator/escape character; construction trims
# outer whitespace, so generate fields with non-space edges.
_field = st.text(
    alphabet=st.sampled_from(list("ab |:\\\n.😺")), min_size=1, max_size=10
).filter(lambda s: s == s.strip() and s)


@given(st.lists(st.tuples(_field, _field, _field), min_size=1, max_size=5))
def test_round_trip_kg(rows):
    s = StructuredData.kg(rows)
    assert delinearize(linearize(s)) == s


@given(st.lists(st.tuples(_field, _field), min_size=1, max_size=5))
def test_round_trip_table(rows):
    s = StructuredData.table(rows)
    assert delinearize(linearize(s)) == s


@given(st.lists(st.tuples(_field, _field, _field), min_size=1, max_size=5))
def test_deterministic(rows):
    s = StructuredData.kg(rows)
    assert linearize(s).text == linearize(s).text
