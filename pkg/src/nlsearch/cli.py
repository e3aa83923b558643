"""Command-line entry point: ``nlsearch <command> [options]``.

Commands: translate, compile, eval, export-finetune, repl. Credentials for
HTTP backends come from the environment variable named by --api-key-env
(default NLSEARCH_API_KEY), never from flags.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import TextIO

from .compiler import compile_document, scrub, serialize_canonical, serialize_filter
from .entities import parse_document, serialize_document
from .errors import AuthError, BackendUnavailable, DatasetError, EmptyQueryError, NLSearchError, TranslationFailed
from .gateway import DEFAULT_API_KEY_ENV, HttpChatClient, MockClient, RefinementPolicy, load_mock_script, translate
from .harness import (
    REPORT_FORMATS,
    SplitSpec,
    export_finetune,
    load_dataset,
    make_translator,
    render_report,
    run_eval,
    split_dataset,
)
from .metrics import default_embedding_provider
from .prompts import default_shot_library, load_shots
from .schema import default_schema, load_schema

log = logging.getLogger("nlsearch")

_DEFAULT_BASE_URLS = {
    "openai": "https://api.openai.com/v1",
    "anthropic": "https://api.anthropic.com/v1",
}


@dataclass
class CliConfig:
    schema_path: str | None = None
    shots_path: str | None = None
    backend: str | None = None
    model: str | None = None
    base_url: str | None = None
    api_key_env: str = DEFAULT_API_KEY_ENV
    max_attempts: int = 3
    seed: int = 0
    in_flight: int = 1
    output_format: str = "both"
    mock_script: str | None = None
    reasoning: bool = True
    verbose: bool = False

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> CliConfig:
        return cls(
            schema_path=args.schema,
            shots_path=args.shots,
            backend=args.backend,
            model=args.model,
            base_url=args.base_url,
            api_key_env=args.api_key_env,
            max_attempts=args.max_attempts,
            seed=args.seed,
            in_flight=args.in_flight,
            output_format=args.format,
            mock_script=args.mock_script,
            reasoning=not args.no_reasoning,
            verbose=args.verbose,
        )

    def load_schema(self):
        if self.schema_path is None:
            return default_schema()
        return load_schema(Path(self.schema_path).read_text(encoding="utf-8"))

    def load_shots(self, schema):
        if self.shots_path is None:
            return default_shot_library(schema)
        return load_shots(Path(self.shots_path).read_text(encoding="utf-8"), schema)

    def policy(self) -> RefinementPolicy:
        return RefinementPolicy(max_attempts=self.max_attempts)

    def client(self, replay_script: dict[str, list[str]] | None = None):
        backend = self.backend or ("mock" if self.mock_script else "openai")
        if backend == "mock":
            if not self.mock_script:
                raise UsageError("--backend mock needs --mock-script")
            return load_mock_script(self.mock_script)
        if backend == "replay":
            if replay_script is None:
                raise UsageError("--backend replay is only available for eval")
            return MockClient(replay_script)
        if not self.model:
            raise UsageError(f"--backend {backend} needs --model")
        return HttpChatClient(
            self.base_url or _DEFAULT_BASE_URLS[backend],
            self.model,
            provider=backend,
            api_key_env=self.api_key_env,
        )


class UsageError(Exception):
    pass


def _common_options() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--schema", help="schema config YAML (default: bundled 15-field schema)")
    p.add_argument("--shots", help="shot library JSON (default: bundled library)")
    p.add_argument("--backend", choices=["openai", "anthropic", "mock", "replay"],
                   help="completion backend (default: mock if --mock-script is given, else openai)")
    p.add_argument("--model", help="model name for HTTP backends")
    p.add_argument("--base-url", help="override the backend base URL")
    p.add_argument("--api-key-env", default=DEFAULT_API_KEY_ENV,
                   help="environment variable holding the API key (default: %(default)s)")
    p.add_argument("--mock-script", help="JSON mock script: a list of replies, or {query: [replies]}")
    p.add_argument("--max-attempts", type=int, default=3, help="refinement attempts per query")
    p.add_argument("--seed", type=int, default=0, help="seed for embeddings and dataset splits")
    p.add_argument("--in-flight", type=int, default=1, help="concurrent translations during eval")
    p.add_argument("--format", choices=["canonical", "filter", "both"], default="both",
                   help="query output format for compile and repl")
    p.add_argument("--no-reasoning", action="store_true", help="omit chain-of-thought text from shots")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    parser = argparse.ArgumentParser(prog="nlsearch", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("translate", parents=[common], help="translate one query into a search-entity document")
    p.add_argument("query")

    p = sub.add_parser("compile", parents=[common], help="scrub and compile a document file")
    p.add_argument("document", help="path to a JSON document, or - for stdin")

    p = sub.add_parser("eval", parents=[common], help="evaluate a JSONL dataset")
    p.add_argument("dataset")
    p.add_argument("--out", default="eval_report", help="report directory (default: %(default)s)")
    p.add_argument("--report-formats", default=",".join(REPORT_FORMATS),
                   help="comma-separated subset of table,json,csv")
    p.add_argument("--present-only", action="store_true",
                   help="score only fields present in the ground truth or the prediction")

    p = sub.add_parser("export-finetune", parents=[common], help="write chat-pair fine-tuning data")
    p.add_argument("dataset")
    p.add_argument("--out", required=True, help="output file, or directory when --split is given")
    p.add_argument("--split", action="store_true", help="write train/validation/test files (72/18/10)")

    sub.add_parser("repl", parents=[common], help="interactive translate-and-compile loop")
    return parser


def _print_query(doc, schema, fmt: str, out: TextIO) -> None:
    report = scrub(doc, schema)
    for removal in report.removals:
        print(f"warning: {removal}", file=sys.stderr)
    ast = compile_document(report.doc_after, schema)
    if fmt in ("canonical", "both"):
        print(serialize_canonical(ast), file=out)
    if fmt in ("filter", "both"):
        print(serialize_filter(ast), file=out)


def cmd_translate(query: str, config: CliConfig, out: TextIO | None = None) -> int:
    out = out or sys.stdout
    if not query.strip():
        raise UsageError("query must not be empty")
    schema = config.load_schema()
    shots = config.load_shots(schema)
    client = config.client()
    try:
        record = translate(query, schema, shots, client, config.policy(), include_reasoning=config.reasoning)
    except TranslationFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(exc.record.transcript(), file=sys.stderr)
        return 1
    if config.verbose:
        print(record.transcript(), file=sys.stderr)
    print(serialize_document(record.final, schema), file=out)
    return 0


def cmd_compile(path: str, config: CliConfig, out: TextIO | None = None) -> int:
    out = out or sys.stdout
    schema = config.load_schema()
    text = sys.stdin.read() if path == "-" else Path(path).read_text(encoding="utf-8")
    outcome = parse_document(text, schema)
    if not outcome.valid:
        print(f"error: {outcome.failure}", file=sys.stderr)
        return 1
    for note in outcome.coercions:
        print(f"warning: coerced {note.field} from {note.from_shape} to {note.to_shape}", file=sys.stderr)
    _print_query(outcome.document, schema, config.output_format, out)
    return 0


def cmd_eval(dataset: str, out_dir: str, formats: list[str], config: CliConfig,
             present_only: bool = False, out: TextIO | None = None) -> int:
    out = out or sys.stdout
    schema = config.load_schema()
    shots = config.load_shots(schema)
    records = load_dataset(dataset, schema)
    replay = {r.query: [serialize_document(r.ground_truth, schema)] for r in records}
    client = config.client(replay_script=replay)
    translator = make_translator(schema, shots, client, config.policy(), include_reasoning=config.reasoning)
    report = run_eval(records, translator, schema, default_embedding_provider(config.seed),
                      config.in_flight, present_only=present_only)
    render_report(report, out_dir, formats)
    print(f"queries: {len(report.per_query)}  failed: {report.failure_count}", file=out)
    print(f"overall mean: {report.overall_mean:.4f}", file=out)
    return 0


def cmd_export(dataset: str, out_path: str, split: bool, config: CliConfig, out: TextIO | None = None) -> int:
    out = out or sys.stdout
    schema = config.load_schema()
    shots = config.load_shots(schema)
    records = load_dataset(dataset, schema)
    if not split:
        export_finetune(records, out_path, schema, shots, include_reasoning=config.reasoning)
        print(f"wrote {len(records)} records to {out_path}", file=out)
        return 0
    target = Path(out_path)
    target.mkdir(parents=True, exist_ok=True)
    parts = split_dataset(records, SplitSpec(seed=config.seed))
    for name, part in zip(("train", "validation", "test"), parts):
        export_finetune(part, target / f"{name}.jsonl", schema, shots, include_reasoning=config.reasoning)
        print(f"wrote {len(part)} records to {target / f'{name}.jsonl'}", file=out)
    return 0


def cmd_repl(config: CliConfig, stdin: TextIO | None = None, out: TextIO | None = None) -> int:
    stdin = stdin or sys.stdin
    out = out or sys.stdout
    schema = config.load_schema()
    shots = config.load_shots(schema)
    client = config.client()
    interactive = stdin.isatty()
    while True:
        if interactive:
            out.write("> ")
            out.flush()
        line = stdin.readline()
        if not line:
            break
        query = line.strip()
        if query == ":quit":
            break
        if not query:
            continue
        try:
            record = translate(query, schema, shots, client, config.policy(), include_reasoning=config.reasoning)
        except (TranslationFailed, BackendUnavailable, AuthError, EmptyQueryError) as exc:
            print(f"error: {exc}", file=out)
            continue
        print(serialize_document(record.final, schema, indent=2), file=out)
        _print_query(record.final, schema, config.output_format, out)
        print(file=out)
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    config = CliConfig.from_args(args)
    try:
        if args.command == "translate":
            return cmd_translate(args.query, config)
        if args.command == "compile":
            return cmd_compile(args.document, config)
        if args.command == "eval":
            formats = [f.strip() for f in args.report_formats.split(",") if f.strip()]
            return cmd_eval(args.dataset, args.out, formats, config, present_only=args.present_only)
        if args.command == "export-finetune":
            return cmd_export(args.dataset, args.out, args.split, config)
        if args.command == "repl":
            return cmd_repl(config)
    except UsageError as exc:
        parser.error(str(exc))
    except DatasetError as exc:
        print("error: invalid dataset", file=sys.stderr)
        for lineno, message in exc.problems:
            print(f"  line {lineno}: {message}" if lineno is not None else f"  {message}", file=sys.stderr)
        return 1
    except (NLSearchError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 2


if __name__ == "__main__":
    sys.exit(main())
