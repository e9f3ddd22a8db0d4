"""Command-line entry point: ``memloop {index,ask,eval,analyze}``.

Settings come from defaults, then an optional JSON config file, then
command-line flags (flags win).  Exit codes: 0 ok, 2 input error,
3 backend error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from memloop.config import ConfigError, LoopConfig
from memloop.controller import RunError, load_trace, run
from memloop.corpus import (
    STORE_FILENAME,
    CorpusError,
    ingest,
    load_corpus,
    load_store,
    save_store,
)
from memloop.harness import run_eval
from memloop.llm.base import BackendError, Backends
from memloop.llm.http import Endpoint, HTTPBackend
from memloop.llm.scripted import load_script
from memloop.metrics import chunk_distance_profile, gold_chunks, load_items
from memloop.retrieval import Embedding, IndexingError, Lexical, build_index, load_index, save_index

logger = logging.getLogger("memloop")

EXIT_OK, EXIT_INPUT, EXIT_BACKEND = 0, 2, 3
INDEX_FILENAME = "index.v1.json"
BACKEND_ROLES = ("perception", "judge", "responder", "vision", "embedding")


class InputError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    corpus: str | None = None
    store: str = "store"
    retriever: str = "lexical"
    embedding_dim: int = 0
    chunk_budget: int = 200
    loop: LoopConfig = field(default_factory=LoopConfig)
    backend_profile: str = "default"
    backends: dict = field(default_factory=dict)
    prompt_dir: str | None = None
    image_dir: str | None = None
    trace_dir: str = "trace"
    report: str = "report.v1.json"
    jobs: int = 1

    def to_dict(self) -> dict:
        return asdict(self)


_PATH_KEYS = ("corpus", "store", "prompt_dir", "image_dir", "trace_dir", "report")


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Merge config file and flags into a RunConfig; pure given file + args."""
    data: dict = {}
    base = Path.cwd()
    if getattr(args, "config", None):
        path = Path(args.config)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise InputError(f"{path}: config file not found") from None
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: invalid JSON: {exc}") from None
        base = path.parent
    loop_data = data.pop("loop", {})
    unknown = set(data) - {f for f in RunConfig.__dataclass_fields__}
    if unknown:
        raise InputError(f"unknown config keys: {sorted(unknown)}")
    for key in _PATH_KEYS:
        if data.get(key):
            data[key] = str((base / data[key]))
    for profile in data.get("backends", {}).values():
        if profile.get("script"):
            profile["script"] = str(base / profile["script"])
    try:
        loop = LoopConfig.from_dict(loop_data)
    except (ConfigError, TypeError) as exc:
        raise InputError(f"invalid loop settings: {exc}") from None
    cfg = RunConfig(**{**data, "loop": loop})

    flags = {
        "corpus": getattr(args, "corpus", None), "store": getattr(args, "store", None),
        "retriever": getattr(args, "retriever", None), "backend_profile": getattr(args, "backend_profile", None),
        "trace_dir": getattr(args, "trace_dir", None), "report": getattr(args, "report", None),
        "jobs": getattr(args, "jobs", None),
    }
    cfg = replace(cfg, **{k: v for k, v in flags.items() if v is not None})
    try:
        loop = cfg.loop.with_(top_k=getattr(args, "k", None), window_w=getattr(args, "w", None),
                              max_iterations=getattr(args, "j", None))
    except ConfigError as exc:
        raise InputError(str(exc)) from None
    if cfg.prompt_dir and loop.prompt_dir is None:
        loop = replace(loop, prompt_dir=cfg.prompt_dir)
    return replace(cfg, loop=loop)


def make_backends(cfg: RunConfig) -> Backends:
    """Build role backends from the selected profile.

    ``scripted:PATH`` selects a scripted backend directly.  Otherwise the
    profile is looked up in ``cfg.backends``; an undefined ``default``
    profile means an HTTP backend configured from environment variables.
    """
    name = cfg.backend_profile
    if name.startswith("scripted:"):
        profile = {"type": "scripted", "script": name.split(":", 1)[1]}
    else:
        profile = cfg.backends.get(name)
        if profile is None:
            if name != "default":
                raise InputError(f"unknown backend profile {name!r}")
            profile = {"type": "http"}
    kind = profile.get("type", "http")
    if kind == "scripted":
        try:
            return Backends(default=load_script(profile["script"]))
        except (OSError, KeyError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot load script: {exc}") from None
    if kind != "http":
        raise InputError(f"unknown backend type {kind!r}")
    roles = profile.get("roles", {})
    opts = dict(timeout=profile.get("timeout", 60.0), max_retries=profile.get("max_retries", 3),
                max_context_tokens=profile.get("max_context_tokens"))

    def endpoint(role: str) -> Endpoint:
        role_cfg = {**roles.get("default", {}), **roles.get(role, {})}
        return Endpoint.from_env(role if role != "default" else "", role_cfg.get("base_url"), role_cfg.get("model"),
                                 role_cfg.get("api_key_env"))

    default = HTTPBackend(endpoint("default"), supports_vision=profile.get("vision", False), **opts)
    out = Backends(default=default)
    for role in BACKEND_ROLES:
        ep = endpoint(role)
        if ep != default.endpoint and ep.base_url and ep.model:
            vision = profile.get("vision", False) if role != "vision" else True
            setattr(out, role, HTTPBackend(ep, supports_vision=vision, **opts))
    return out


def _store_paths(cfg: RunConfig) -> tuple[Path, Path]:
    d = Path(cfg.store)
    return d / STORE_FILENAME, d / INDEX_FILENAME


def _retriever_kind(cfg: RunConfig):
    if cfg.retriever == "lexical":
        return Lexical()
    if cfg.retriever == "embedding":
        try:
            return Embedding("embedding", cfg.embedding_dim)
        except ValueError as exc:
            raise InputError(f"embedding retriever: {exc}") from None
    raise InputError(f"unknown retriever {cfg.retriever!r}")


def _load(cfg: RunConfig, backends: Backends | None):
    store_path, index_path = _store_paths(cfg)
    if not store_path.exists():
        raise InputError(f"{store_path}: store not found; run `memloop index` first")
    store = load_store(store_path)
    emb = backends.for_role("embedding") if backends else None
    index = load_index(index_path, emb) if index_path.exists() else build_index(store, _retriever_kind(cfg), emb)
    return store, index


def cmd_index(cfg: RunConfig, out=sys.stdout) -> int:
    if not cfg.corpus:
        raise InputError("no corpus given (--corpus)")
    if not Path(cfg.corpus).exists():
        raise InputError(f"{cfg.corpus}: corpus not found")
    store = ingest(load_corpus(cfg.corpus), cfg.chunk_budget)
    kind = _retriever_kind(cfg)
    backends = make_backends(cfg) if isinstance(kind, Embedding) else None
    index = build_index(store, kind, backends.for_role("embedding") if backends else None)
    store_path, index_path = _store_paths(cfg)
    save_store(store, store_path)
    save_index(index, index_path)
    toks = [c.token_estimate for c in store.chunks]
    print(f"chunks: {len(store)}", file=out)
    print(f"utterances: {len(store.utterances)}", file=out)
    if toks:
        print(f"tokens: total {sum(toks)} mean {sum(toks) / len(toks):.1f} max {max(toks)}", file=out)
    print(f"store: {store_path}", file=out)
    return EXIT_OK


def cmd_ask(cfg: RunConfig, question: str, query_id: str | None = None, out=sys.stdout) -> int:
    backends = make_backends(cfg)
    store, index = _load(cfg, backends)
    qid = query_id or "ask-" + hashlib.sha1(question.encode("utf-8")).hexdigest()[:10]
    answer, trace = run(question, store, index, cfg.loop, backends, query_id=qid, image_dir=cfg.image_dir)
    path = trace.write(cfg.trace_dir)
    print(f"answer: {answer.text}", file=out)
    print(f"evidence: {', '.join(answer.supporting_dia_ids) or '-'}", file=out)
    print(f"iterations: {answer.iterations_used}", file=out)
    print(f"terminated_by: {answer.terminated_by}", file=out)
    print(f"tokens: {answer.token_usage.total_tokens}", file=out)
    print(f"trace: {path}", file=out)
    return EXIT_OK


def cmd_eval(cfg: RunConfig, items_path: str, out=sys.stdout) -> int:
    try:
        items = load_items(items_path)
    except FileNotFoundError:
        raise InputError(f"{items_path}: items file not found") from None
    except (ValueError, KeyError) as exc:
        raise InputError(f"{items_path}: {exc}") from None
    backends = make_backends(cfg)
    store, index = _load(cfg, backends)
    report, _, _ = run_eval(items, store, index, cfg.loop, backends, jobs=cfg.jobs,
                            trace_dir=cfg.trace_dir, image_dir=cfg.image_dir)
    report_path = Path(cfg.report)
    report_path.parent.mkdir(parents=True, exist_ok=True)
    report_path.write_text(report.to_json(), encoding="utf-8")
    table = report.to_table()
    report_path.with_suffix(".txt").write_text(table, encoding="utf-8")
    out.write(table)
    if items and len(report.failed) == len(items):
        return EXIT_BACKEND
    return EXIT_OK


def cmd_analyze(cfg: RunConfig, gold_path: str, csv_path: str, all_iterations: bool = False,
                out=sys.stdout) -> int:
    trace_files = sorted(Path(cfg.trace_dir).glob("*.v1.json")) if Path(cfg.trace_dir).is_dir() else []
    if not trace_files:
        raise InputError(f"{cfg.trace_dir}: no traces found")
    try:
        items = {i.query_id: i for i in load_items(gold_path)}
    except FileNotFoundError:
        raise InputError(f"{gold_path}: gold evidence file not found") from None
    store_path, _ = _store_paths(cfg)
    if not store_path.exists():
        raise InputError(f"{store_path}: store not found")
    store = load_store(store_path)
    runs, skipped = [], 0
    for f in trace_files:
        tr = load_trace(f)
        item = items.get(tr["query_id"])
        gold = gold_chunks(item.evidence_dia_ids, store) if item else []
        if not gold or not tr["iterations"]:
            skipped += 1
            continue
        its = tr["iterations"] if all_iterations else tr["iterations"][:1]
        retrieved = {c for it in its for c in it["perception"]["candidates"]}
        runs.append((retrieved, gold))
    profile = chunk_distance_profile(runs)
    Path(csv_path).parent.mkdir(parents=True, exist_ok=True)
    Path(csv_path).write_text(profile.to_csv(), encoding="utf-8")
    s = profile.summary()
    print(f"queries analyzed: {len(runs)} (skipped {skipped})", file=out)
    if not profile.total:
        print("no false retrievals; profile is empty", file=out)
    else:
        print(f"false retrievals: {s['false_retrievals']}", file=out)
        print(f"within 10 chunks: {s['within_10_pct']:.1f}%  within 100 chunks: {s['within_100_pct']:.1f}%",
              file=out)
        print("buckets: " + ", ".join(f"{b} {v:.1f}%" for b, v in s["shares_pct"].items()), file=out)
    print(f"csv: {csv_path}", file=out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--corpus", help="corpus JSON file")
    common.add_argument("--store", help="store directory")
    common.add_argument("--k", type=int, help="top-K for focal retrieval")
    common.add_argument("--w", type=int, help="adjacent window size for context expansion")
    common.add_argument("--j", type=int, help="maximum loop iterations")
    common.add_argument("--retriever", choices=("lexical", "embedding"))
    common.add_argument("--backend-profile", help="profile name from config, or scripted:PATH")
    common.add_argument("--jobs", type=int, help="parallel items for eval")
    common.add_argument("--trace-dir")
    common.add_argument("--report", help="report output path")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="memloop", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("index", parents=[common], help="ingest a corpus and build the index")
    ask = sub.add_parser("ask", parents=[common], help="answer one question")
    ask.add_argument("question")
    ask.add_argument("--query-id")
    ev = sub.add_parser("eval", parents=[common], help="run and score a set of questions")
    ev.add_argument("items", help="JSON file of eval items")
    an = sub.add_parser("analyze", parents=[common], help="chunk-distance profile of retrieval errors")
    an.add_argument("gold", help="JSON file of eval items with gold evidence ids")
    an.add_argument("--out", default="profile.csv", help="CSV output path")
    an.add_argument("--all-iterations", action="store_true",
                    help="use candidates from every iteration, not just the first")
    return p


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "index":
            return cmd_index(cfg, out)
        if args.command == "ask":
            return cmd_ask(cfg, args.question, args.query_id, out)
        if args.command == "eval":
            return cmd_eval(cfg, args.items, out)
        return cmd_analyze(cfg, args.gold, args.out, args.all_iterations, out)
    except (InputError, CorpusError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (BackendError, RunError, IndexingError) as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND


if __name__ == "__main__":
    sys.exit(main())
