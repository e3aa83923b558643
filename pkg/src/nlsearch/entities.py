"""Search-entity documents: parsing raw LLM output, coercion, bank checks."""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from enum import Enum
from types import MappingProxyType
from typing import Any, Iterator, Mapping

from .schema import FieldKind, FieldSpec, InputShape, SchemaRegistry, word_bank_lookup


@dataclass(frozen=True)
class Bounds:
    """Inclusive integer range; either end may be open."""

    min: int | None = None
    max: int | None = None

    def get(self, side: str) -> int | None:
        return self.min if side == "min" else self.max

    def is_empty(self) -> bool:
        return self.min is None and self.max is None


class SearchEntityDocument(Mapping[str, Any]):
    """Immutable mapping from registry field name to a coerced value.

    Value shapes: ``tuple[str, ...]`` for list fields, ``str`` for scalar
    fields, :class:`Bounds` for integer fields, and a read-only mapping of
    sub-key to ``tuple[str, ...]`` for the location field. Absent fields are
    simply missing; empty values are never stored.
    """

    __slots__ = ("_values",)

    def __init__(self, values: Mapping[str, Any] | None = None):
        frozen = {}
        for key, value in (values or {}).items():
            if isinstance(value, list):
                value = tuple(value)
            elif isinstance(value, Mapping) and not isinstance(value, MappingProxyType):
                value = MappingProxyType({k: tuple(v) for k, v in value.items()})
            frozen[key] = value
        self._values = MappingProxyType(frozen)

    def __getitem__(self, key: str) -> Any:
        return self._values[key]

    def __iter__(self) -> Iterator[str]:
        return iter(self._values)

    def __len__(self) -> int:
        return len(self._values)

    def __repr__(self) -> str:
        inner = ", ".join(f"{k}={_plain(v)!r}" for k, v in self._values.items())
        return f"SearchEntityDocument({inner})"

    __hash__ = None  # type: ignore[assignment]

    def without(self, *names: str) -> SearchEntityDocument:
        return SearchEntityDocument({k: v for k, v in self._values.items() if k not in names})

    def replace(self, **values: Any) -> SearchEntityDocument:
        """Copy with some fields replaced; a value of None removes the field."""
        merged = dict(self._values)
        for key, value in values.items():
            if value is None:
                merged.pop(key, None)
            else:
                merged[key] = value
        return SearchEntityDocument(merged)

    def to_wire(self, schema: SchemaRegistry) -> dict[str, Any]:
        """Plain-JSON form with flat bound keys, in registry order."""
        out: dict[str, Any] = {}
        for spec in schema:
            if spec.name not in self._values:
                continue
            value = self._values[spec.name]
            if spec.kind is FieldKind.INTEGER:
                lo_key, hi_key = spec.wire_keys
                if value.min is not None:
                    out[lo_key] = value.min
                if value.max is not None:
                    out[hi_key] = value.max
            elif spec.is_map:
                out[spec.name] = {sub: list(value[sub]) for sub in spec.sub_keys if sub in value}
            elif spec.is_list:
                out[spec.name] = list(value)
            else:
                out[spec.name] = value
        return out


def _plain(value: Any) -> Any:
    if isinstance(value, Mapping):
        return {k: list(v) for k, v in value.items()}
    if isinstance(value, tuple):
        return list(value)
    return value


def serialize_document(doc: SearchEntityDocument, schema: SchemaRegistry, *, indent: int | None = None) -> str:
    """JSON text of ``doc``; compact and single-line unless ``indent`` is given."""
    separators = (",", ":") if indent is None else (",", ": ")
    return json.dumps(doc.to_wire(schema), ensure_ascii=False, indent=indent, separators=separators)


# --------------------------------------------------------------------------
# parse outcomes


class FailureKind(str, Enum):
    NOT_JSON = "not_json"
    WRONG_ROOT = "wrong_root"
    UNKNOWN_FIELD = "unknown_field"
    TYPE_MISMATCH = "type_mismatch"


@dataclass(frozen=True)
class ParseFailure:
    kind: FailureKind
    detail: str
    field: str | None = None

    def __str__(self) -> str:
        where = f" [{self.field}]" if self.field else ""
        return f"{self.kind.value}{where}: {self.detail}"


@dataclass(frozen=True)
class CoercionNote:
    field: str
    from_shape: str
    to_shape: str


@dataclass(frozen=True)
class ParseOutcome:
    """Either a valid document plus the repairs applied, or one failure."""

    document: SearchEntityDocument | None = None
    coercions: tuple[CoercionNote, ...] = ()
    failure: ParseFailure | None = None

    @property
    def valid(self) -> bool:
        return self.failure is None


@dataclass(frozen=True)
class BankViolation:
    field: str
    value: str
    sub_key: str | None = None


class _Invalid(Exception):
    def __init__(self, kind: FailureKind, detail: str, field: str | None = None):
        super().__init__(detail)
        self.failure = ParseFailure(kind, detail, field)


# --------------------------------------------------------------------------
# JSON extraction


def extract_json(raw: str) -> str | None:
    """Return the first balanced top-level JSON object literal in ``raw``.

    Surrounding prose and code fences are ignored. Brace counting is
    string-aware inside candidate objects; a balanced span that does not
    decode as a JSON object is skipped and scanning resumes after it.
    """
    n = len(raw)
    i = 0
    while i < n:
        start = raw.find("{", i)
        if start < 0:
            return None
        depth = 0
        in_string = False
        escaped = False
        end = -1
        for j in range(start, n):
            ch = raw[j]
            if in_string:
                if escaped:
                    escaped = False
                elif ch == "\\":
                    escaped = True
                elif ch == '"':
                    in_string = False
            elif ch == '"':
                in_string = True
            elif ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    end = j + 1
                    break
        if end < 0:
            return None
        candidate = raw[start:end]
        try:
            if isinstance(json.loads(candidate), dict):
                return candidate
        except ValueError:
            pass
        i = end
    return None


# --------------------------------------------------------------------------
# document parsing

_INT_STRING = re.compile(r"^\s*\d+\s*$")


def _load_root(candidate: str) -> dict:
    try:
        obj = json.loads(candidate)
    except ValueError:
        extracted = extract_json(candidate)
        if extracted is None:
            raise _Invalid(FailureKind.NOT_JSON, "no JSON object found in the response") from None
        obj = json.loads(extracted)
    if not isinstance(obj, dict):
        raise _Invalid(FailureKind.WRONG_ROOT, f"expected a JSON object, got {type(obj).__name__}")
    return obj


def _string(value: Any, field: str, notes: list[CoercionNote]) -> str:
    if not isinstance(value, str):
        raise _Invalid(FailureKind.TYPE_MISMATCH, f"expected a string, got {type(value).__name__}", field)
    trimmed = value.strip()
    if not trimmed:
        raise _Invalid(FailureKind.TYPE_MISMATCH, "empty string", field)
    if trimmed != value:
        notes.append(CoercionNote(field, "untrimmed_string", "string"))
    return trimmed


def _string_list(value: Any, field: str, notes: list[CoercionNote]) -> tuple[str, ...]:
    if isinstance(value, str):
        notes.append(CoercionNote(field, "string", "string_list"))
        value = [value]
    if not isinstance(value, list):
        raise _Invalid(FailureKind.TYPE_MISMATCH, f"expected a list of strings, got {type(value).__name__}", field)
    out: list[str] = []
    seen: set[str] = set()
    for item in value:
        text = _string(item, field, notes)
        key = text.casefold()
        if key in seen:
            notes.append(CoercionNote(field, "list_with_duplicates", "deduplicated_list"))
            continue
        seen.add(key)
        out.append(text)
    return tuple(out)


def _bound(value: Any, field: str, notes: list[CoercionNote]) -> int:
    if isinstance(value, bool):
        raise _Invalid(FailureKind.TYPE_MISMATCH, "expected an integer, got bool", field)
    if isinstance(value, int):
        result = value
    elif isinstance(value, float) and math.isfinite(value) and value.is_integer():
        notes.append(CoercionNote(field, "float", "integer"))
        result = int(value)
    elif isinstance(value, str) and _INT_STRING.match(value):
        notes.append(CoercionNote(field, "numeric_string", "integer"))
        result = int(value)
    else:
        raise _Invalid(FailureKind.TYPE_MISMATCH, f"expected a non-negative integer, got {value!r}", field)
    if result < 0:
        raise _Invalid(FailureKind.TYPE_MISMATCH, f"bounds must be non-negative, got {result}", field)
    return result


def _location(spec: FieldSpec, value: Any, notes: list[CoercionNote]) -> Mapping[str, tuple[str, ...]] | None:
    if not isinstance(value, dict):
        raise _Invalid(FailureKind.TYPE_MISMATCH, f"expected an object of lists, got {type(value).__name__}", spec.name)
    parsed: dict[str, tuple[str, ...]] = {}
    for sub, items in value.items():
        path = f"{spec.name}.{sub}"
        if sub not in spec.sub_keys:
            raise _Invalid(FailureKind.UNKNOWN_FIELD, f"unknown {spec.name} key {sub!r}", path)
        if items is None or items == []:
            notes.append(CoercionNote(path, "empty", "absent"))
            continue
        parsed[sub] = _string_list(items, path, notes)
    if not parsed:
        notes.append(CoercionNote(spec.name, "empty", "absent"))
        return None
    return {sub: parsed[sub] for sub in spec.sub_keys if sub in parsed}


def _parse_object(obj: dict, schema: SchemaRegistry, notes: list[CoercionNote]) -> SearchEntityDocument:
    values: dict[str, Any] = {}
    bounds: dict[str, dict[str, int]] = {}
    for key, raw in obj.items():
        resolved = schema.resolve_wire_key(key)
        if resolved is None:
            spec = schema.field(key) if key in schema else None
            if spec is not None and spec.kind is FieldKind.INTEGER and isinstance(raw, dict):
                # nested {"min": .., "max": ..} under the field name
                notes.append(CoercionNote(key, "nested_bounds", "flat_bounds"))
                for side, sub_raw in raw.items():
                    if side not in ("min", "max"):
                        raise _Invalid(FailureKind.UNKNOWN_FIELD, f"unknown bound {side!r}", key)
                    if sub_raw is not None:
                        bounds.setdefault(key, {})[side] = _bound(sub_raw, f"{spec.key_prefix}_{side}", notes)
                continue
            raise _Invalid(FailureKind.UNKNOWN_FIELD, f"unknown field {key!r}", key)
        spec, side = resolved
        if raw is None or raw == [] or raw == {}:
            notes.append(CoercionNote(key, "empty", "absent"))
            continue
        if side is not None:
            bounds.setdefault(spec.name, {})[side] = _bound(raw, key, notes)
        elif spec.is_map:
            loc = _location(spec, raw, notes)
            if loc is not None:
                values[spec.name] = loc
        elif spec.shape is InputShape.STRING_LIST:
            values[spec.name] = _string_list(raw, key, notes)
        else:
            values[spec.name] = _string(raw, key, notes)
    for name, sides in bounds.items():
        if sides:
            values[name] = Bounds(sides.get("min"), sides.get("max"))
    return SearchEntityDocument({name: values[name] for name in schema.order if name in values})


def parse_document(candidate: str, schema: SchemaRegistry) -> ParseOutcome:
    """Parse raw model output into a validated document.

    Never raises for bad input; returns an invalid outcome carrying a single
    failure class instead. Lenient repairs (scalar string to singleton list,
    integer-valued strings and floats to integers, dropping null/empty
    values, case-insensitive de-duplication, trimming) are recorded as
    :class:`CoercionNote` entries.
    """
    notes: list[CoercionNote] = []
    try:
        obj = _load_root(candidate)
        doc = _parse_object(obj, schema, notes)
    except _Invalid as exc:
        return ParseOutcome(failure=exc.failure)
    return ParseOutcome(document=doc, coercions=tuple(notes))


def document_from_wire(obj: Mapping[str, Any] | str, schema: SchemaRegistry) -> SearchEntityDocument:
    """Strictly build a document from its wire form (dict or JSON text).

    Raises ValueError when the input is invalid.
    """
    text = obj if isinstance(obj, str) else json.dumps(obj)
    outcome = parse_document(text, schema)
    if not outcome.valid:
        raise ValueError(str(outcome.failure))
    return outcome.document  # type: ignore[return-value]


def validate_against_bank(doc: SearchEntityDocument, schema: SchemaRegistry) -> list[BankViolation]:
    """One violation per categorical value that has no word-bank match."""
    violations = []
    for spec in schema:
        if spec.kind is not FieldKind.CATEGORICAL or spec.name not in doc:
            continue
        value = doc[spec.name]
        if spec.is_map:
            for sub, items in value.items():
                violations += [
                    BankViolation(spec.name, v, sub) for v in items if word_bank_lookup(spec, v, sub) is None
                ]
        else:
            items = value if isinstance(value, tuple) else (value,)
            violations += [BankViolation(spec.name, v) for v in items if word_bank_lookup(spec, v) is None]
    return violations
