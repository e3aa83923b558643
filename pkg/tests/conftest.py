from __future__ import annotations

import functools
import string
from pathlib import Path

import numpy as np
import pytest
from hypothesis import strategies as st

from nlsearch.compiler import (
    MembershipClause,
    QueryAst,
    RangeClause,
    ScopedMembershipClause,
    TextMatchClause,
)
from nlsearch.entities import Bounds, SearchEntityDocument
from nlsearch.schema import FieldKind, default_schema

GOLDEN = Path(__file__).parent / "golden"
SCHEMA = default_schema()

DECISION_MAKERS_WIRE = {
    "company_name": ["Zoominfo", "Chorus"],
    "management_levels": ["C-Level", "VP-Level"],
    "location": {"us_states": ["United States"]},
    "person_or_company": "person",
}
DECISION_MAKERS_QUERY = "decision makers at Zoominfo and Chorus in the us"


@pytest.fixture
def schema():
    return SCHEMA


class OrthogonalProvider:
    """Embeds every distinct text onto its own axis, so unequal texts score 0."""

    dimension = 256

    def __init__(self):
        self._axes: dict[str, int] = {}

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dimension)
        if text:
            vec[self._axes.setdefault(text, len(self._axes))] = 1.0
        return vec


# --------------------------------------------------------------------------
# hypothesis strategies

words = st.text(alphabet=string.ascii_lowercase, min_size=1, max_size=8)
free_texts = st.lists(words, min_size=1, max_size=3).map(" ".join)
# characters that stress the filter quoting rules
_edge = string.ascii_letters + '"\\()*:-.,éß'
quoted_texts = st.builds(
    lambda a, mid, b: a + mid + b,
    st.sampled_from(_edge),
    st.text(alphabet=_edge + " ", max_size=10),
    st.sampled_from(_edge) | st.just(""),
)
bound_values = st.integers(min_value=0, max_value=10**10)


def _keep(value: str) -> str:
    return value


_recase = st.sampled_from([_keep, str.lower, str.upper])


def _bank_items(bank, dirty: bool):
    clean = st.sampled_from(sorted(bank.entries))
    if not dirty:
        return clean
    return st.one_of(st.builds(lambda v, f: f(v), clean, _recase), free_texts.map(lambda s: "zz " + s))


def _unique_list(items, max_size=4):
    return st.lists(items, min_size=1, max_size=max_size, unique_by=str.casefold)


def _field_value(spec, dirty: bool):
    if spec.kind is FieldKind.INTEGER:
        bounds = st.one_of(
            st.builds(Bounds, bound_values, st.none() | bound_values),
            st.builds(Bounds, st.none(), bound_values),
        )
        if not dirty:
            bounds = bounds.map(lambda b: b if b.min is None or b.max is None or b.min <= b.max else Bounds(b.max, b.min))
        return bounds
    if spec.is_map:
        subs = {}
        for sub in spec.sub_keys:
            bank = spec.bank_for(sub)
            items = free_texts if bank is None else _bank_items(bank, dirty)
            subs[sub] = _unique_list(items, 3)
        return st.fixed_dictionaries({}, optional=subs).filter(bool)
    if spec.kind is FieldKind.CATEGORICAL:
        items = _bank_items(spec.word_bank, dirty)
        return _unique_list(items).map(tuple) if spec.is_list else items
    return _unique_list(free_texts).map(tuple) if spec.is_list else free_texts


def _drop_exclusive(values: dict) -> dict:
    if values.get("titles"):
        values.pop("management_levels", None)
        values.pop("departments", None)
    return values


@functools.lru_cache(maxsize=None)
def documents(schema=SCHEMA, dirty: bool = False):
    """Documents over ``schema``. Clean ones are in-bank with min <= max;
    dirty ones may carry off-case, out-of-bank and reversed values."""
    fields = st.fixed_dictionaries({}, optional={spec.name: _field_value(spec, dirty) for spec in schema})
    if not dirty:
        fields = fields.map(_drop_exclusive)
    return fields.map(SearchEntityDocument)


def _range(prefix, lo, hi):
    if lo is not None and hi is not None and lo > hi:
        lo, hi = hi, lo
    return [RangeClause(prefix, lo, hi)]


def _clause_family(spec):
    """Strategy for the clauses one field contributes (possibly none)."""
    values = st.lists(quoted_texts, min_size=1, max_size=4, unique=True).map(tuple)
    if spec.kind is FieldKind.INTEGER:
        family = st.builds(_range, st.just(spec.key_prefix), st.none() | bound_values, st.none() | bound_values)
    elif spec.is_map:
        scoped = st.fixed_dictionaries({}, optional={sub: values for sub in spec.sub_keys}).filter(bool)
        family = scoped.map(lambda subs: [ScopedMembershipClause(spec.name, k, v) for k, v in subs.items()])
    else:
        cls = MembershipClause if spec.kind is FieldKind.CATEGORICAL else TextMatchClause
        family = values.map(lambda vals: [cls(spec.name, vals)])
    return st.just([]) | family


@functools.lru_cache(maxsize=None)
def query_asts(schema=SCHEMA):
    families = st.tuples(*(_clause_family(spec) for spec in schema))
    return families.map(lambda parts: QueryAst(tuple(c for part in parts for c in part)))
