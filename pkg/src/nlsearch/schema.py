"""Catalog of search fields: kinds, input shapes, and categorical word banks.

A :class:`SchemaRegistry` is loaded from a small YAML document (see
``docs/schema-config.md``); :func:`default_schema` returns the bundled
15-field catalog.
"""

from __future__ import annotations

import functools
import re
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from types import MappingProxyType
from typing import Any, Iterator, Mapping

import yaml

from .banks import BUILTIN_BANKS
from .errors import ContractViolation, DuplicateFieldError, SchemaConfigError

LOCATION_SUB_KEYS = ("us_states", "ca_provinces", "us_ca_metros", "others")

_IDENT = re.compile(r"^[a-z][a-z0-9_]*$")


class MetricKind(str, Enum):
    EXACT = "exact"
    JACCARD = "jaccard"
    COSINE = "cosine"
    SEMANTIC = "semantic"


class FieldKind(str, Enum):
    INTEGER = "integer"
    CATEGORICAL = "categorical"
    FREE_TEXT = "free_text"

    @property
    def metrics(self) -> tuple[MetricKind, ...]:
        """Metrics that apply to values of this kind, in report order."""
        return _KIND_METRICS[self]


_KIND_METRICS = {
    FieldKind.INTEGER: (MetricKind.EXACT,),
    FieldKind.CATEGORICAL: (MetricKind.EXACT, MetricKind.JACCARD),
    FieldKind.FREE_TEXT: (MetricKind.EXACT, MetricKind.COSINE, MetricKind.SEMANTIC),
}


class InputShape(str, Enum):
    SCALAR_STRING = "scalar_string"
    SCALAR_INTEGER = "scalar_integer"
    STRING_LIST = "string_list"
    STRING_LIST_MAP = "string_list_map"


_ALLOWED_SHAPES = {
    FieldKind.INTEGER: {InputShape.SCALAR_INTEGER},
    FieldKind.FREE_TEXT: {InputShape.SCALAR_STRING, InputShape.STRING_LIST},
    FieldKind.CATEGORICAL: {
        InputShape.SCALAR_STRING,
        InputShape.STRING_LIST,
        InputShape.STRING_LIST_MAP,
    },
}


def _fold(value: str) -> str:
    return value.strip().casefold()


@dataclass(frozen=True)
class WordBank:
    """Closed set of canonical values, matched case-insensitively.

    ``ref`` names the built-in bank the entries came from, if any; it is kept
    so that dumping a registry writes the reference back instead of the list.
    """

    entries: tuple[str, ...]
    ref: str | None = None
    _index: Mapping[str, str] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        index: dict[str, str] = {}
        for entry in self.entries:
            if not isinstance(entry, str) or not entry.strip():
                raise ValueError(f"word bank entries must be non-empty strings, got {entry!r}")
            key = _fold(entry)
            if key in index:
                raise ValueError(f"duplicate word bank entry {entry!r} (case-insensitive)")
            index[key] = entry
        object.__setattr__(self, "_index", MappingProxyType(index))

    def lookup(self, value: str) -> str | None:
        return self._index.get(_fold(value))

    def __iter__(self) -> Iterator[str]:
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, value: object) -> bool:
        return isinstance(value, str) and _fold(value) in self._index


@dataclass(frozen=True)
class FieldSpec:
    """One search field.

    Integer fields describe a pair of bounds that travel on the wire as
    ``<key_prefix>_min`` and ``<key_prefix>_max``. Map-shaped fields carry a
    bank per sub-key in ``sub_banks``; a ``None`` bank accepts any string.
    """

    name: str
    kind: FieldKind
    shape: InputShape
    description: str
    guidelines: str = ""
    label: str = ""
    word_bank: WordBank | None = None
    sub_keys: tuple[str, ...] = ()
    sub_banks: Mapping[str, WordBank | None] = field(default_factory=dict)
    key_prefix: str = ""

    def __post_init__(self) -> None:
        if not self.label:
            object.__setattr__(self, "label", self.name.replace("_", " ").title())
        if self.kind is FieldKind.INTEGER and not self.key_prefix:
            prefix = self.name[: -len("_bounds")] if self.name.endswith("_bounds") else self.name
            object.__setattr__(self, "key_prefix", prefix)
        object.__setattr__(self, "sub_banks", MappingProxyType(dict(self.sub_banks)))

    def __hash__(self) -> int:
        return hash((self.name, self.kind, self.shape))

    @property
    def is_map(self) -> bool:
        return self.shape is InputShape.STRING_LIST_MAP

    @property
    def is_list(self) -> bool:
        return self.shape is InputShape.STRING_LIST

    @property
    def wire_keys(self) -> tuple[str, ...]:
        """Top-level keys this field occupies in a serialized document."""
        if self.kind is FieldKind.INTEGER:
            return (f"{self.key_prefix}_min", f"{self.key_prefix}_max")
        return (self.name,)

    def bank_for(self, sub_key: str | None = None) -> WordBank | None:
        if self.is_map:
            if sub_key is None:
                raise ContractViolation(f"field {self.name!r} needs a sub_key for bank lookups")
            if sub_key not in self.sub_banks:
                raise ContractViolation(f"field {self.name!r} has no sub_key {sub_key!r}")
            return self.sub_banks[sub_key]
        return self.word_bank


@dataclass(frozen=True)
class SchemaRegistry:
    fields: tuple[FieldSpec, ...]

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for spec in self.fields:
            if spec.name in seen:
                raise DuplicateFieldError(f"duplicate field name {spec.name!r}", field=spec.name)
            seen.add(spec.name)
        object.__setattr__(self, "_by_name", MappingProxyType({f.name: f for f in self.fields}))
        wire: dict[str, tuple[FieldSpec, str | None]] = {}
        for spec in self.fields:
            if spec.kind is FieldKind.INTEGER:
                lo, hi = spec.wire_keys
                wire[lo] = (spec, "min")
                wire[hi] = (spec, "max")
            else:
                wire[spec.name] = (spec, None)
        object.__setattr__(self, "_by_wire_key", MappingProxyType(wire))

    @property
    def order(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.fields)

    def field(self, name: str) -> FieldSpec:
        try:
            return self._by_name[name]  # type: ignore[attr-defined]
        except KeyError:
            raise KeyError(f"no field named {name!r}") from None

    def resolve_wire_key(self, key: str) -> tuple[FieldSpec, str | None] | None:
        """Map a serialized key to ``(spec, bound)``; bound is ``"min"``/``"max"`` or None."""
        return self._by_wire_key.get(key)  # type: ignore[attr-defined]

    def __contains__(self, name: object) -> bool:
        return name in self._by_name  # type: ignore[attr-defined]

    def __iter__(self) -> Iterator[FieldSpec]:
        return iter(self.fields)

    def __len__(self) -> int:
        return len(self.fields)

    def __hash__(self) -> int:
        return hash(self.order)


def word_bank_lookup(spec: FieldSpec, value: str, sub_key: str | None = None) -> str | None:
    """Return the canonical bank entry matching ``value``, or None.

    Matching ignores case and surrounding whitespace. For the open ``others``
    location bank every non-blank value matches itself (trimmed).
    """
    if spec.kind is not FieldKind.CATEGORICAL:
        raise ContractViolation(f"field {spec.name!r} is {spec.kind.value}, not categorical")
    bank = spec.bank_for(sub_key)
    if bank is None:
        trimmed = value.strip()
        return trimmed or None
    return bank.lookup(value)


# --------------------------------------------------------------------------
# config loading


class _LineLoader(yaml.SafeLoader):
    """SafeLoader that remembers the source line of every mapping."""

    def construct_mapping(self, node, deep=False):
        mapping = super().construct_mapping(node, deep=deep)
        mapping["__line__"] = node.start_mark.line + 1
        return mapping


_FIELD_KEYS = {
    "name", "label", "kind", "shape", "description", "guidelines",
    "word_bank", "sub_keys", "key_prefix",
}


def _bank_from_config(raw: Any, *, line: int, name: str) -> WordBank:
    if isinstance(raw, str):
        if not raw.startswith("@"):
            raise SchemaConfigError("word bank must be a list or an @reference", line=line, field=name)
        ref = raw[1:]
        if ref not in BUILTIN_BANKS:
            raise SchemaConfigError(f"unknown built-in bank {raw!r}", line=line, field=name)
        return WordBank(BUILTIN_BANKS[ref], ref=ref)
    if not isinstance(raw, list) or not raw:
        raise SchemaConfigError("word bank must be a non-empty list", line=line, field=name)
    try:
        return WordBank(tuple(raw))
    except ValueError as exc:
        raise SchemaConfigError(str(exc), line=line, field=name) from None


def _field_from_config(raw: Any, index: int) -> FieldSpec:
    if not isinstance(raw, dict):
        raise SchemaConfigError(f"fields[{index}] must be a mapping")
    line = raw.pop("__line__", None)
    name = raw.get("name")
    if not isinstance(name, str) or not _IDENT.match(name):
        raise SchemaConfigError("field name must be a lowercase identifier", line=line, field=str(name))
    unknown = set(raw) - _FIELD_KEYS
    if unknown:
        raise SchemaConfigError(f"unknown keys {sorted(unknown)}", line=line, field=name)
    try:
        kind = FieldKind(raw.get("kind"))
        shape = InputShape(raw.get("shape"))
    except ValueError as exc:
        raise SchemaConfigError(str(exc), line=line, field=name) from None
    if shape not in _ALLOWED_SHAPES[kind]:
        raise SchemaConfigError(f"{kind.value} fields cannot have shape {shape.value}", line=line, field=name)
    description = raw.get("description")
    if not isinstance(description, str) or not description.strip():
        raise SchemaConfigError("description is required", line=line, field=name)
    for key in ("guidelines", "label", "key_prefix"):
        if key in raw and not isinstance(raw[key], str):
            raise SchemaConfigError(f"{key} must be a string", line=line, field=name)

    word_bank = None
    sub_keys: tuple[str, ...] = ()
    sub_banks: dict[str, WordBank | None] = {}
    if shape is InputShape.STRING_LIST_MAP:
        subs = raw.get("sub_keys")
        if not isinstance(subs, dict):
            raise SchemaConfigError("map-shaped fields need a sub_keys mapping", line=line, field=name)
        sub_line = subs.pop("__line__", line)
        if not subs:
            raise SchemaConfigError("sub_keys must not be empty", line=sub_line, field=name)
        for sub, bank_raw in subs.items():
            if not isinstance(sub, str) or not _IDENT.match(sub):
                raise SchemaConfigError(f"bad sub_key {sub!r}", line=sub_line, field=name)
            sub_banks[sub] = (
                None if bank_raw is None
                else _bank_from_config(bank_raw, line=sub_line, name=f"{name}.{sub}")
            )
        sub_keys = tuple(sub_banks)
        if "word_bank" in raw:
            raise SchemaConfigError("map-shaped fields take banks per sub_key", line=line, field=name)
    else:
        if "sub_keys" in raw:
            raise SchemaConfigError("sub_keys only apply to map-shaped fields", line=line, field=name)
        if kind is FieldKind.CATEGORICAL:
            if "word_bank" not in raw:
                raise SchemaConfigError("categorical fields need a word_bank", line=line, field=name)
            word_bank = _bank_from_config(raw["word_bank"], line=line, name=name)
        elif "word_bank" in raw:
            raise SchemaConfigError("only categorical fields take a word_bank", line=line, field=name)
    if "key_prefix" in raw and kind is not FieldKind.INTEGER:
        raise SchemaConfigError("key_prefix only applies to integer fields", line=line, field=name)

    return FieldSpec(
        name=name,
        kind=kind,
        shape=shape,
        description=" ".join(description.split()),
        guidelines=" ".join(raw.get("guidelines", "").split()),
        label=raw.get("label", ""),
        word_bank=word_bank,
        sub_keys=sub_keys,
        sub_banks=sub_banks,
        key_prefix=raw.get("key_prefix", ""),
    )


def load_schema(config_text: str) -> SchemaRegistry:
    """Build a registry from schema-config YAML text.

    Raises:
        SchemaConfigError: the document is empty, not YAML, or a field entry
            is invalid. The message carries the line and field name.
        DuplicateFieldError: two entries share a name.
    """
    try:
        doc = yaml.load(config_text, Loader=_LineLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise SchemaConfigError(
            f"invalid YAML: {getattr(exc, 'problem', exc)}",
            line=mark.line + 1 if mark is not None else None,
        ) from None
    if doc is None:
        raise SchemaConfigError("empty schema config")
    if not isinstance(doc, dict):
        raise SchemaConfigError("schema config must be a mapping with a 'fields' list", line=1)
    doc.pop("__line__", None)
    version = doc.pop("version", 1)
    if version != 1:
        raise SchemaConfigError(f"unsupported schema config version {version!r}")
    raw_fields = doc.pop("fields", None)
    if doc:
        raise SchemaConfigError(f"unknown top-level keys {sorted(doc)}")
    if not isinstance(raw_fields, list) or not raw_fields:
        raise SchemaConfigError("'fields' must be a non-empty list")

    specs = []
    seen: dict[str, int | None] = {}
    for i, raw in enumerate(raw_fields):
        line = raw.get("__line__") if isinstance(raw, dict) else None
        spec = _field_from_config(raw, i)
        if spec.name in seen:
            raise DuplicateFieldError(
                f"duplicate field name (first defined on line {seen[spec.name]})",
                line=line,
                field=spec.name,
            )
        seen[spec.name] = line
        specs.append(spec)
    if sum(s.is_map for s in specs) > 1:
        raise SchemaConfigError("at most one map-shaped (location) field is supported")
    return SchemaRegistry(tuple(specs))


def _bank_to_config(bank: WordBank) -> Any:
    if bank.ref is not None and bank.entries == BUILTIN_BANKS.get(bank.ref):
        return f"@{bank.ref}"
    return list(bank.entries)


def dump_schema(registry: SchemaRegistry) -> str:
    """Serialize a registry back to schema-config YAML (inverse of load_schema)."""
    fields = []
    for spec in registry:
        entry: dict[str, Any] = {
            "name": spec.name,
            "label": spec.label,
            "kind": spec.kind.value,
            "shape": spec.shape.value,
        }
        if spec.kind is FieldKind.INTEGER:
            entry["key_prefix"] = spec.key_prefix
        entry["description"] = spec.description
        if spec.guidelines:
            entry["guidelines"] = spec.guidelines
        if spec.word_bank is not None:
            entry["word_bank"] = _bank_to_config(spec.word_bank)
        if spec.is_map:
            entry["sub_keys"] = {
                sub: None if bank is None else _bank_to_config(bank)
                for sub, bank in spec.sub_banks.items()
            }
        fields.append(entry)
    return yaml.safe_dump(
        {"version": 1, "fields": fields}, sort_keys=False, allow_unicode=True, width=79
    )


@functools.lru_cache(maxsize=1)
def default_schema() -> SchemaRegistry:
    """The bundled 15-field catalog."""
    text = resources.files("nlsearch").joinpath("data/default_schema.yaml").read_text("utf-8")
    return load_schema(text)
