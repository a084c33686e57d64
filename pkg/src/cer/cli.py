"""Command-line pipeline driver.

  cer ingest|mine|train|index|query|eval|project [--config PATH] [overrides]

Every command is a pure function of (config, input artifacts): rerunning a
command with identical inputs produces byte-identical outputs. Exit codes:
0 success, 1 usage error, 2 data error. CER_EMBED_URL switches the embedder
to the remote provider at the given endpoint without editing the config. An
advisory lock next to the config file serializes commands that share a
workspace.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

from filelock import FileLock, Timeout

from . import __version__
from .config import PipelineConfig, config_fingerprint, load_config
from .contrastive import load_triplets, mine_triplets, save_triplets, train
from .corpus import chunk_corpus, load_chunks, load_claims, load_corpus, save_chunks
from .embed import make_embedder, pool_mean, project
from .errors import CerError
from .evaluate import chunk_polarity, pca_project_2d, projection_csv, run_eval
from .explain import (
    assemble_prompt,
    attribute_decomposition,
    attribute_occlusion,
    build_explanation,
    rerank,
    select_rationale,
)
from .index import build_index, load_index, save_index, search_topk
from .projection import init_head, load_head, save_head
from .subjectivity import load_lexicon, subjectivity_score

LOCK_TIMEOUT_S = 600


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the CLI contract reserves 2 for data errors."""

    def error(self, message: str):  # noqa: A003 - argparse API
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _require(path: Path, what: str, producer: str) -> Path:
    if not path.exists():
        raise CerError(f"{what} not found at {path}; run `cer {producer}` first")
    return path


def _labels_from_corpus(cfg: PipelineConfig) -> dict[str, dict[str, str]]:
    docs = load_corpus(_require(cfg.path("corpus"), "corpus file", "ingest (check paths.corpus)"))
    return {doc.doc_id: dict(doc.labels) for doc in docs}


def _embedder(cfg: PipelineConfig):
    return make_embedder(cfg.embedder, cache_path=cfg.path("cache"))


# --------- commands ---------


def cmd_ingest(cfg: PipelineConfig, args: argparse.Namespace) -> int:
    docs = load_corpus(cfg.path("corpus"))
    chunks = chunk_corpus(docs, cfg.chunking)
    save_chunks(chunks, cfg.path("chunks"))
    print(f"ingested {len(docs)} documents into {len(chunks)} chunks -> {cfg.path('chunks')}")
    return 0


def cmd_mine(cfg: PipelineConfig, args: argparse.Namespace) -> int:
    chunks = load_chunks(_require(cfg.path("chunks"), "chunk table", "ingest"))
    claims = load_claims(cfg.path("claims"))
    labels = _labels_from_corpus(cfg)
    lex = load_lexicon(cfg.lexicon_path)
    triplets = mine_triplets(
        claims, chunks, labels, _embedder(cfg), lex, cfg.mining, margin=cfg.training.margin
    )
    save_triplets(triplets, cfg.path("triplets"))
    print(f"mined {len(triplets)} triplets -> {cfg.path('triplets')}")
    return 0


def cmd_train(cfg: PipelineConfig, args: argparse.Namespace) -> int:
    chunks = load_chunks(_require(cfg.path("chunks"), "chunk table", "ingest"))
    triplets = load_triplets(_require(cfg.path("triplets"), "triplets file", "mine"))
    embedder = _embedder(cfg)
    chunk_vecs = {c.chunk_id: pool_mean(embedder.embed_tokens(c.text)) for c in chunks}
    anchor_vecs = {
        text: pool_mean(embedder.embed_tokens(text))
        for text in sorted({t.anchor_text for t in triplets})
    }
    dim = len(next(iter(chunk_vecs.values())))
    head0 = init_head(dim, dim, cfg.training.metric, seed=cfg.training.seed)
    head, curve = train(head0, triplets, anchor_vecs, chunk_vecs, cfg.training)
    save_head(head, cfg.path("head"))
    reports = cfg.path("reports")
    reports.mkdir(parents=True, exist_ok=True)
    curve_path = reports / "loss_curve.csv"
    with curve_path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write("epoch,mean_loss\n")
        for epoch, loss in enumerate(curve, start=1):
            fh.write(f"{epoch},{loss!r}\n")
    first = f"{curve[0]:.6f}" if curve else "n/a"
    last = f"{curve[-1]:.6f}" if curve else "n/a"
    print(
        f"trained {cfg.training.metric} head for {cfg.training.epochs} epochs "
        f"(mean loss {first} -> {last}) -> {cfg.path('head')}"
    )
    return 0


def cmd_index(cfg: PipelineConfig, args: argparse.Namespace) -> int:
    chunks = load_chunks(_require(cfg.path("chunks"), "chunk table", "ingest"))
    head = load_head(_require(cfg.path("head"), "head checkpoint", "train"))
    idx = build_index(chunks, _embedder(cfg), head, head.metric)
    save_index(idx, cfg.path("index"))
    print(f"indexed {len(idx)} chunks ({idx.metric}) -> {cfg.path('index')}")
    return 0


def cmd_query(cfg: PipelineConfig, args: argparse.Namespace) -> int:
    if args.k < 0:
        raise CerError(f"--k must be >= 0, got {args.k}")
    head = load_head(_require(cfg.path("head"), "head checkpoint", "train"))
    idx = load_index(_require(cfg.path("index"), "index file", "index"))
    chunks = {c.chunk_id: c for c in load_chunks(_require(cfg.path("chunks"), "chunk table", "ingest"))}
    lex = load_lexicon(cfg.lexicon_path)
    embedder = _embedder(cfg)

    pool_k = min(cfg.rerank.rerank_pool, len(idx))
    hits = search_topk(idx, args.claim, embedder, head, pool_k)
    attrs = {}
    subj = {}
    for hit in hits:
        chunk = chunks.get(hit.chunk_id)
        if chunk is None:
            raise CerError(f"index references unknown chunk {hit.chunk_id!r}; re-run `cer ingest` and `cer index`")
        if head.metric == "cosine":
            attrs[hit.chunk_id] = attribute_decomposition(args.claim, chunk, embedder, head)
        else:
            attrs[hit.chunk_id] = attribute_occlusion(args.claim, chunk, embedder, head, head.metric)
        subj[hit.chunk_id] = subjectivity_score(chunk, lex)
    reranked = rerank(hits, attrs, subj, lex, cfg.rerank)[: args.k]
    rationales = {h.chunk_id: select_rationale(attrs[h.chunk_id], cfg.rerank) for h in reranked}

    if args.explain:
        payload = build_explanation(args.claim, reranked, attrs, subj, rationales, chunks)
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        print(f"{'rank':>4}  {'score':>10}  {'subj':>6}  chunk")
        for h in reranked:
            text = chunks[h.chunk_id].text
            snippet = text if len(text) <= 70 else text[:67] + "..."
            print(f"{h.rank:>4}  {h.score:>10.4f}  {subj[h.chunk_id]:>6.3f}  [{h.chunk_id}] {snippet}")
    if args.prompt:
        print()
        print(assemble_prompt(args.claim, reranked, chunks, rationales))
    return 0


def cmd_eval(cfg: PipelineConfig, args: argparse.Namespace) -> int:
    chunks = load_chunks(_require(cfg.path("chunks"), "chunk table", "ingest"))
    head = load_head(_require(cfg.path("head"), "head checkpoint", "train"))
    idx = load_index(_require(cfg.path("index"), "index file", "index"))
    claims = load_claims(cfg.path("claims"))
    labels = _labels_from_corpus(cfg)
    report = run_eval(
        chunks,
        claims,
        labels,
        idx,
        head,
        _embedder(cfg),
        ks=args.ks,
        config_fingerprint=config_fingerprint(cfg),
    )
    reports = cfg.path("reports")
    reports.mkdir(parents=True, exist_ok=True)
    out = reports / "eval_report.json"
    out.write_text(report.to_json(), encoding="utf-8")
    print(report.to_table(), end="")
    print(f"report -> {out}")
    return 0


def cmd_project(cfg: PipelineConfig, args: argparse.Namespace) -> int:
    chunks = load_chunks(_require(cfg.path("chunks"), "chunk table", "ingest"))
    head = load_head(_require(cfg.path("head"), "head checkpoint", "train"))
    labels = _labels_from_corpus(cfg)
    embedder = _embedder(cfg)
    pos, neg = chunk_polarity(chunks, labels)
    if len(pos) + len(neg) < 2:
        raise CerError("projection needs at least 2 labeled chunks")
    vectors = [project(head, pool_mean(embedder.embed_tokens(c.text))) for c in pos + neg]
    point_labels = ["pos"] * len(pos) + ["neg"] * len(neg)
    rows = pca_project_2d(vectors, point_labels)
    reports = cfg.path("reports")
    reports.mkdir(parents=True, exist_ok=True)
    out = reports / "projection.csv"
    out.write_text(projection_csv(rows), encoding="utf-8")
    print(f"projected {len(rows)} labeled chunks -> {out}")
    return 0


# --------- argument parsing and dispatch ---------


def _parse_ks(raw: str) -> list[int]:
    try:
        ks = [int(part) for part in raw.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated ints, got {raw!r}")
    if not ks:
        raise argparse.ArgumentTypeError("at least one K required")
    return ks


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cer", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"cer {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default="cer.json", help="pipeline config file (default: cer.json)")
        return p

    p = add("ingest", "load and chunk the corpus, write the chunk table")
    p.add_argument("--max-tokens", type=int, help="override chunking.max_tokens")
    p.add_argument("--overlap-tokens", type=int, help="override chunking.overlap_tokens")

    p = add("mine", "mine subjectivity-hard triplets")
    p.add_argument("--negatives-per-anchor", type=int, help="override mining.negatives_per_anchor")
    p.add_argument("--semi-hard", action="store_true", help="keep only semi-hard negatives")

    p = add("train", "train the projection head, write checkpoint + loss curve")
    p.add_argument("--metric", choices=["cosine", "euclidean"], help="override training.metric")
    p.add_argument("--epochs", type=int, help="override training.epochs")
    p.add_argument("--learning-rate", type=float, help="override training.learning_rate")
    p.add_argument("--margin", type=float, help="override training.margin")
    p.add_argument("--batch-size", type=int, help="override training.batch_size")
    p.add_argument("--seed", type=int, help="override training.seed")

    add("index", "build and save the exact vector index")

    p = add("query", "retrieve, re-rank, and explain hits for a claim")
    p.add_argument("claim", help="claim text to query")
    p.add_argument("--k", type=int, default=5, help="hits to return after re-ranking (default 5)")
    p.add_argument("--rerank-pool", type=int, help="override rerank.rerank_pool")
    p.add_argument("--explain", action="store_true", help="print the explanation JSON payload")
    p.add_argument("--prompt", action="store_true", help="also print the assembled evidence prompt")

    p = add("eval", "compute precision/recall@K and separation statistics")
    p.add_argument("--ks", type=_parse_ks, default=[1, 5], help="comma-separated K values (default 1,5)")

    add("project", "export the 2-D PCA projection CSV of labeled chunks")
    return parser


def _apply_overrides(cfg: PipelineConfig, args: argparse.Namespace) -> PipelineConfig:
    endpoint = os.environ.get("CER_EMBED_URL")
    if endpoint:
        cfg = dataclasses.replace(
            cfg, embedder=dataclasses.replace(cfg.embedder, provider="remote", endpoint=endpoint)
        )

    def over(section: str, **fields):
        nonlocal cfg
        updates = {k: v for k, v in fields.items() if v is not None and v is not False}
        if updates:
            cfg = dataclasses.replace(
                cfg, **{section: dataclasses.replace(getattr(cfg, section), **updates)}
            )

    if args.command == "ingest":
        over("chunking", max_tokens=args.max_tokens, overlap_tokens=args.overlap_tokens)
    elif args.command == "mine":
        over(
            "mining",
            negatives_per_anchor=args.negatives_per_anchor,
            semi_hard_only=args.semi_hard or None,
        )
    elif args.command == "train":
        over(
            "training",
            metric=args.metric,
            epochs=args.epochs,
            learning_rate=args.learning_rate,
            margin=args.margin,
            batch_size=args.batch_size,
            seed=args.seed,
        )
    elif args.command == "query" and args.rerank_pool is not None:
        over("rerank", rerank_pool=args.rerank_pool)
    cfg.validate()
    return cfg


COMMANDS = {
    "ingest": cmd_ingest,
    "mine": cmd_mine,
    "train": cmd_train,
    "index": cmd_index,
    "query": cmd_query,
    "eval": cmd_eval,
    "project": cmd_project,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        lock = FileLock(str(Path(args.config).resolve().parent / ".cer.lock"))
        try:
            with lock.acquire(timeout=LOCK_TIMEOUT_S):
                return COMMANDS[args.command](cfg, args)
        except Timeout:
            raise CerError(f"workspace is locked by another cer process: {lock.lock_file}")
    except CerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except BrokenPipeError:
        return 0


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
