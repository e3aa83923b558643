"""Scrub validated documents and compile them into search-service queries.

Filter-string grammar (see ``docs/filter-grammar.md``)::

    query  := clause (" AND " clause)*
    clause := field ":" expr
    expr   := "(" q (" OR " q)* ")" | "[" bound " TO " bound "]"
    bound  := integer | "*"
    q      := '"' (char | '\\' char)* '"'

Range clauses are keyed by the bound family (``revenue``, ``employee``);
location clauses are keyed ``location.<sub_key>``.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Union

from .entities import Bounds, SearchEntityDocument, validate_against_bank
from .errors import CompileContractError, ContractViolation, FilterSyntaxError
from .schema import FieldKind, SchemaRegistry, word_bank_lookup

TITLES = "titles"
# fields that must be empty whenever titles is set
EXCLUSIVE_WITH_TITLES = ("management_levels", "departments")


def _sort_key(value: str) -> tuple[str, str]:
    return (value.casefold(), value)


def _sorted_values(values) -> tuple[str, ...]:
    values = tuple(values)
    if not values:
        raise ContractViolation("clause values must not be empty")
    return tuple(sorted(values, key=_sort_key))


@dataclass(frozen=True)
class RangeClause:
    field: str
    min: int | None = None
    max: int | None = None

    def __post_init__(self) -> None:
        if self.min is not None and self.max is not None and self.min > self.max:
            raise ContractViolation(f"range on {self.field!r} has min > max")


@dataclass(frozen=True)
class MembershipClause:
    field: str
    values: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", _sorted_values(self.values))


@dataclass(frozen=True)
class TextMatchClause:
    field: str
    values: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", _sorted_values(self.values))


@dataclass(frozen=True)
class ScopedMembershipClause:
    field: str
    sub_key: str
    values: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", _sorted_values(self.values))


Clause = Union[RangeClause, MembershipClause, TextMatchClause, ScopedMembershipClause]


@dataclass(frozen=True)
class QueryAst:
    clauses: tuple[Clause, ...] = ()


class RemovalReason(str, Enum):
    OUT_OF_BANK = "out_of_bank"
    EXCLUSIVITY = "exclusivity"
    BOUND_CONFLICT = "bound_conflict"


@dataclass(frozen=True)
class Removal:
    """One scrub action. Bound conflicts are swaps, not deletions; their
    ``value`` describes the original pair."""

    field: str
    value: str
    reason: RemovalReason
    sub_key: str | None = None

    def __str__(self) -> str:
        where = f"{self.field}.{self.sub_key}" if self.sub_key else self.field
        verb = "swapped" if self.reason is RemovalReason.BOUND_CONFLICT else "removed"
        return f"{where}: {verb} {self.value!r} ({self.reason.value})"


@dataclass(frozen=True)
class ScrubReport:
    removals: tuple[Removal, ...]
    doc_after: SearchEntityDocument


# --------------------------------------------------------------------------
# scrub


def scrub(doc: SearchEntityDocument, schema: SchemaRegistry) -> ScrubReport:
    """Remove out-of-bank values, enforce titles exclusivity, fix reversed bounds.

    Surviving categorical values are rewritten to their canonical bank
    casing. Fields left empty are dropped.
    """
    removals: list[Removal] = []
    values: dict = {}
    for spec in schema:
        if spec.name not in doc:
            continue
        value = doc[spec.name]
        if spec.kind is FieldKind.CATEGORICAL:
            if spec.is_map:
                kept_map = {}
                for sub in spec.sub_keys:
                    if sub not in value:
                        continue
                    kept = _canonical(spec, value[sub], removals, sub)
                    if kept:
                        kept_map[sub] = kept
                if kept_map:
                    values[spec.name] = kept_map
            elif spec.is_list:
                kept = _canonical(spec, value, removals)
                if kept:
                    values[spec.name] = kept
            else:
                kept = _canonical(spec, (value,), removals)
                if kept:
                    values[spec.name] = kept[0]
        elif spec.kind is FieldKind.INTEGER:
            if value.min is not None and value.max is not None and value.min > value.max:
                removals.append(
                    Removal(spec.name, f"min={value.min} > max={value.max}", RemovalReason.BOUND_CONFLICT)
                )
                value = Bounds(value.max, value.min)
            values[spec.name] = value
        else:
            values[spec.name] = value

    if values.get(TITLES):
        for name in EXCLUSIVE_WITH_TITLES:
            dropped = values.pop(name, None)
            if dropped is None:
                continue
            items = dropped if isinstance(dropped, tuple) else (dropped,)
            removals += [Removal(name, v, RemovalReason.EXCLUSIVITY) for v in items]

    return ScrubReport(tuple(removals), SearchEntityDocument(values))


def _canonical(spec, items, removals, sub_key=None) -> tuple[str, ...]:
    kept: list[str] = []
    for item in items:
        canon = word_bank_lookup(spec, item, sub_key)
        if canon is None:
            removals.append(Removal(spec.name, item, RemovalReason.OUT_OF_BANK, sub_key))
        elif canon not in kept:
            kept.append(canon)
    return tuple(kept)


# --------------------------------------------------------------------------
# compile


def compile_document(doc: SearchEntityDocument, schema: SchemaRegistry) -> QueryAst:
    """Turn a scrubbed document into clauses, one family per field, in registry order.

    Raises:
        CompileContractError: the document still has bank violations,
            non-canonical categorical values, a titles exclusivity breach,
            reversed bounds, or keys outside the registry.
    """
    unknown = [k for k in doc if k not in schema]
    if unknown:
        raise CompileContractError(f"fields not in the registry: {unknown}")
    violations = validate_against_bank(doc, schema)
    if violations:
        raise CompileContractError(f"out-of-bank values; scrub first: {violations}")
    if doc.get(TITLES) and any(doc.get(n) for n in EXCLUSIVE_WITH_TITLES):
        raise CompileContractError("titles is set together with management_levels/departments; scrub first")

    clauses: list[Clause] = []
    for spec in schema:
        if spec.name not in doc:
            continue
        value = doc[spec.name]
        if spec.kind is FieldKind.INTEGER:
            if value.min is not None and value.max is not None and value.min > value.max:
                raise CompileContractError(f"{spec.name} has min > max; scrub first")
            if not value.is_empty():
                clauses.append(RangeClause(spec.key_prefix, value.min, value.max))
        elif spec.is_map:
            for sub in spec.sub_keys:
                if value.get(sub):
                    clauses.append(ScopedMembershipClause(spec.name, sub, _require_canonical(spec, value[sub], sub)))
        else:
            items = value if isinstance(value, tuple) else (value,)
            if spec.kind is FieldKind.CATEGORICAL:
                clauses.append(MembershipClause(spec.name, _require_canonical(spec, items)))
            else:
                clauses.append(TextMatchClause(spec.name, items))
    return QueryAst(tuple(clauses))


# "compile" shadows a builtin; keep the short name available for callers that want it
compile = compile_document  # noqa: A001


def _require_canonical(spec, items, sub_key=None) -> tuple[str, ...]:
    for item in items:
        if word_bank_lookup(spec, item, sub_key) != item:
            raise CompileContractError(f"{spec.name}: {item!r} is not in canonical form; scrub first")
    return tuple(items)


# --------------------------------------------------------------------------
# serialization


def serialize_canonical(ast: QueryAst) -> str:
    """Single-line JSON form; keys follow clause order, values sorted."""
    out: dict = {}
    for clause in ast.clauses:
        if isinstance(clause, RangeClause):
            rng = {}
            if clause.min is not None:
                rng["min"] = clause.min
            if clause.max is not None:
                rng["max"] = clause.max
            out[clause.field] = rng
        elif isinstance(clause, ScopedMembershipClause):
            out.setdefault(clause.field, {})[clause.sub_key] = list(clause.values)
        else:
            out[clause.field] = list(clause.values)
    return json.dumps(out, ensure_ascii=False, separators=(",", ":"))


def _quote(value: str) -> str:
    return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'


def serialize_filter(ast: QueryAst) -> str:
    """Solr-style filter string; see the module docstring for the grammar."""
    parts = []
    for clause in ast.clauses:
        if isinstance(clause, RangeClause):
            lo = "*" if clause.min is None else str(clause.min)
            hi = "*" if clause.max is None else str(clause.max)
            parts.append(f"{clause.field}:[{lo} TO {hi}]")
        else:
            name = clause.field
            if isinstance(clause, ScopedMembershipClause):
                name = f"{clause.field}.{clause.sub_key}"
            parts.append(f"{name}:(" + " OR ".join(_quote(v) for v in clause.values) + ")")
    return " AND ".join(parts)


_FIELD_RE = re.compile(r"[a-z][a-z0-9_]*(?:\.[a-z][a-z0-9_]*)?")
_BOUND_RE = re.compile(r"\d+|\*")


@dataclass
class _FilterParser:
    text: str
    schema: SchemaRegistry
    pos: int = 0
    _ranges: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self._ranges = {s.key_prefix: s for s in self.schema if s.kind is FieldKind.INTEGER}

    def fail(self, message: str):
        raise FilterSyntaxError(message, self.pos)

    def expect(self, literal: str) -> None:
        if not self.text.startswith(literal, self.pos):
            self.fail(f"expected {literal!r}")
        self.pos += len(literal)

    def parse(self) -> QueryAst:
        if self.text == "":
            return QueryAst(())
        clauses = [self.clause()]
        while self.pos < len(self.text):
            self.expect(" AND ")
            clauses.append(self.clause())
        return QueryAst(tuple(clauses))

    def clause(self) -> Clause:
        m = _FIELD_RE.match(self.text, self.pos)
        if not m:
            self.fail("expected a field name")
        name = m.group()
        self.pos = m.end()
        self.expect(":")
        if self.text.startswith("[", self.pos):
            return self.range(name)
        values = self.values()
        if "." in name:
            base, sub = name.split(".", 1)
            spec = self.schema.field(base) if base in self.schema else None
            if spec is None or not spec.is_map or sub not in spec.sub_keys:
                self.fail(f"unknown scoped field {name!r}")
            return ScopedMembershipClause(base, sub, values)
        if name not in self.schema:
            self.fail(f"unknown field {name!r}")
        spec = self.schema.field(name)
        if spec.kind is FieldKind.CATEGORICAL and not spec.is_map:
            return MembershipClause(name, values)
        if spec.kind is FieldKind.FREE_TEXT:
            return TextMatchClause(name, values)
        self.fail(f"field {name!r} does not take a value list")

    def range(self, name: str) -> RangeClause:
        if name not in self._ranges:
            self.fail(f"unknown range field {name!r}")
        self.expect("[")
        lo = self.bound()
        self.expect(" TO ")
        hi = self.bound()
        self.expect("]")
        try:
            return RangeClause(name, lo, hi)
        except ContractViolation as exc:
            self.fail(str(exc))

    def bound(self) -> int | None:
        m = _BOUND_RE.match(self.text, self.pos)
        if not m:
            self.fail("expected an integer or '*'")
        self.pos = m.end()
        return None if m.group() == "*" else int(m.group())

    def values(self) -> tuple[str, ...]:
        self.expect("(")
        out = [self.quoted()]
        while self.text.startswith(" OR ", self.pos):
            self.pos += 4
            out.append(self.quoted())
        self.expect(")")
        return tuple(out)

    def quoted(self) -> str:
        self.expect('"')
        chars = []
        while True:
            if self.pos >= len(self.text):
                self.fail("unterminated string")
            ch = self.text[self.pos]
            if ch == "\\":
                if self.pos + 1 >= len(self.text):
                    self.fail("dangling escape")
                chars.append(self.text[self.pos + 1])
                self.pos += 2
            elif ch == '"':
                self.pos += 1
                return "".join(chars)
            else:
                chars.append(ch)
                self.pos += 1


def parse_filter(text: str, schema: SchemaRegistry) -> QueryAst:
    """Parse a filter string back into a QueryAst.

    The schema tells membership fields from text-match fields and maps range
    keys back to their bound family; the string alone does not carry that.
    """
    return _FilterParser(text, schema).parse()
