"""System message, few-shot library, and prompt rendering."""

from __future__ import annotations

import functools
import json
from dataclasses import dataclass
from importlib import resources
from string import Template

from .banks import BUILTIN_BANK_SUMMARIES
from .entities import SearchEntityDocument, parse_document
from .errors import EmptyQueryError
from .schema import FieldKind, FieldSpec, InputShape, SchemaRegistry, WordBank

SHOT_LIBRARY_VERSION = 1

_TYPE_NAMES = {
    InputShape.SCALAR_STRING: "str",
    InputShape.SCALAR_INTEGER: "int",
    InputShape.STRING_LIST: "List[str]",
    InputShape.STRING_LIST_MAP: "Dict[str, List[str]]",
}


@dataclass(frozen=True)
class FewShotExample:
    """A worked query with its answer document and chain-of-thought rationale.

    ``answer_text`` is the JSON exactly as shown to the model; it is kept
    separately from ``answer`` so hand-formatted shots render verbatim.
    """

    query: str
    answer: SearchEntityDocument
    reasoning: str
    answer_text: str

    def __hash__(self) -> int:
        return hash((self.query, self.answer_text, self.reasoning))


@dataclass(frozen=True)
class PromptBundle:
    system_message: str
    shots: tuple[FewShotExample, ...]
    user_query: str
    refinement_suffix: str | None = None

    def user_message(self) -> str:
        parts = [f"Prompt: {self.user_query}"]
        if self.refinement_suffix:
            parts.append(self.refinement_suffix)
        parts.append("Answer in json format:")
        return "\n\n".join(parts)

    def with_suffix(self, suffix: str | None) -> PromptBundle:
        return PromptBundle(self.system_message, self.shots, self.user_query, suffix)


# --------------------------------------------------------------------------
# answer formatting


def format_answer(doc: SearchEntityDocument, schema: SchemaRegistry) -> str:
    """Pretty JSON in the house shot style: one-space indent, inline lists."""
    lines = []
    items = list(doc.to_wire(schema).items())
    for i, (key, value) in enumerate(items):
        comma = "," if i < len(items) - 1 else ""
        if isinstance(value, dict):
            lines.append(f" {json.dumps(key)}: {{")
            subs = list(value.items())
            for j, (sub, entries) in enumerate(subs):
                sub_comma = "," if j < len(subs) - 1 else ""
                lines.append(f"   {json.dumps(sub)}: {json.dumps(entries, ensure_ascii=False)}{sub_comma}")
            lines.append(f" }}{comma}")
        else:
            lines.append(f" {json.dumps(key)}: {json.dumps(value, ensure_ascii=False)}{comma}")
    if not lines:
        return "{}"
    return "{\n" + "\n".join(lines) + "\n}"


def render_shot(shot: FewShotExample, *, include_reasoning: bool = True) -> str:
    text = f"Prompt: {shot.query}\n\nAnswer in json format:\n{shot.answer_text}"
    if include_reasoning and shot.reasoning:
        text += f"\n\nReasoning:\n{shot.reasoning}"
    return text


# --------------------------------------------------------------------------
# shot library


def load_shots(text: str, schema: SchemaRegistry) -> list[FewShotExample]:
    """Parse a shot-library JSON document.

    Format: ``{"version": 1, "shots": [{"query", "answer", "reasoning"}]}``
    where ``answer`` is either a document object or the literal JSON text to
    show the model. Every answer must parse with zero coercions.
    """
    data = json.loads(text)
    if isinstance(data, list):
        data = {"version": SHOT_LIBRARY_VERSION, "shots": data}
    if data.get("version") != SHOT_LIBRARY_VERSION:
        raise ValueError(f"unsupported shot library version {data.get('version')!r}")
    shots = []
    for i, raw in enumerate(data.get("shots", [])):
        query = raw.get("query", "")
        if not isinstance(query, str) or not query.strip():
            raise ValueError(f"shot {i}: query must be a non-empty string")
        answer = raw.get("answer")
        answer_json = answer if isinstance(answer, str) else json.dumps(answer)
        outcome = parse_document(answer_json, schema)
        if not outcome.valid:
            raise ValueError(f"shot {i}: invalid answer: {outcome.failure}")
        if outcome.coercions:
            raise ValueError(f"shot {i}: answer needs coercions {list(outcome.coercions)}")
        answer_text = answer if isinstance(answer, str) else format_answer(outcome.document, schema)
        shots.append(
            FewShotExample(
                query=query.strip(),
                answer=outcome.document,
                reasoning=raw.get("reasoning", "").strip(),
                answer_text=answer_text,
            )
        )
    return shots


def dump_shots(shots: list[FewShotExample] | tuple[FewShotExample, ...], schema: SchemaRegistry) -> str:
    records = []
    for shot in shots:
        formatted = format_answer(shot.answer, schema)
        answer = shot.answer.to_wire(schema) if shot.answer_text == formatted else shot.answer_text
        records.append({"query": shot.query, "answer": answer, "reasoning": shot.reasoning})
    return json.dumps({"version": SHOT_LIBRARY_VERSION, "shots": records}, indent=2, ensure_ascii=False) + "\n"


@functools.lru_cache(maxsize=4)
def _bundled_shots(schema: SchemaRegistry) -> tuple[FewShotExample, ...]:
    text = resources.files("nlsearch").joinpath("data/shots.json").read_text("utf-8")
    return tuple(load_shots(text, schema))


def default_shot_library(schema: SchemaRegistry | None = None) -> list[FewShotExample]:
    """The bundled shot library, validated against ``schema`` (default schema if omitted)."""
    from .schema import default_schema

    return list(_bundled_shots(schema or default_schema()))


# --------------------------------------------------------------------------
# system message


def _choices(bank: WordBank) -> list[str]:
    if bank.ref is not None and bank.ref in BUILTIN_BANK_SUMMARIES:
        return [f"Choices: {BUILTIN_BANK_SUMMARIES[bank.ref]}."]
    return ["Choices (comma separated):", ",".join(bank.entries)]


def field_block(spec: FieldSpec) -> str:
    if spec.kind is FieldKind.INTEGER:
        lines = [f'"{key}": int' for key in spec.wire_keys]
    else:
        lines = [f'"{spec.name}": {_TYPE_NAMES[spec.shape]}']
    lines.append(f"Description: {spec.description}")
    if spec.guidelines:
        lines.append(f"Guidelines: {spec.guidelines}")
    if spec.word_bank is not None:
        lines += _choices(spec.word_bank)
    if spec.is_map:
        lines.append("Keys:")
        for sub in spec.sub_keys:
            bank = spec.sub_banks[sub]
            if bank is None:
                lines.append(f'"{sub}": any other location, written the way the user wrote it.')
            else:
                choice_lines = _choices(bank)
                lines.append(f'"{sub}" {choice_lines[0][0].lower()}{choice_lines[0][1:]}')
                lines += choice_lines[1:]
    return "\n".join(lines)


@functools.lru_cache(maxsize=1)
def _template() -> Template:
    return Template(resources.files("nlsearch").joinpath("data/system_message.txt").read_text("utf-8"))


def build_system_message(
    schema: SchemaRegistry,
    shots: list[FewShotExample] | tuple[FewShotExample, ...] = (),
    *,
    include_reasoning: bool = True,
) -> str:
    """Render the full system message: role, output contract, field blocks, examples."""
    blocks = "\n\n".join(field_block(spec) for spec in schema)
    if shots:
        rendered = "\n\n".join(render_shot(s, include_reasoning=include_reasoning) for s in shots)
        examples = f"Examples:\n\n{rendered}"
    else:
        examples = ""
    return _template().substitute(field_blocks=blocks, examples_section=examples).rstrip() + "\n"


def render_prompt(
    schema: SchemaRegistry,
    shots: list[FewShotExample] | tuple[FewShotExample, ...],
    user_query: str,
    *,
    include_reasoning: bool = True,
) -> PromptBundle:
    query = user_query.strip() if isinstance(user_query, str) else ""
    if not query:
        raise EmptyQueryError("query is empty")
    shots = tuple(shots)
    return PromptBundle(
        system_message=_cached_system_message(schema, shots, include_reasoning),
        shots=shots,
        user_query=query,
    )


@functools.lru_cache(maxsize=16)
def _cached_system_message(schema: SchemaRegistry, shots: tuple[FewShotExample, ...], include_reasoning: bool) -> str:
    return build_system_message(schema, shots, include_reasoning=include_reasoning)
