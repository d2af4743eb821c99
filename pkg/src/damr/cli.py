"""Command-line entry points: synth, pretrain, answer, eval."""
from __future__ import annotations

import argparse
import json
import math
import sys

from .data import load_dataset, save_dataset
from .embed import CachedEmbedder, EmbeddingCache, RemoteEmbedder, StubEmbedder
from .kg import load_kg
from .planner import ChatClient, LlmPlanner, MockPlanner, SimilarityPlanner
from .runner import evaluate
from .scorer import MiningConfig, PathScorer, mine_triplets
from .search import SearchConfig, search
from .synth import SynthSpec, generate_synthetic, oracle_paths


def _add_embedder_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--embedder", choices=["stub", "remote"], default="stub")
    parser.add_argument("--embed-seed", type=int, default=0, help="stub embedder seed")
    parser.add_argument("--embed-model", default="", help="remote embedding model name")
    parser.add_argument("--cache", default=None, help="embedding cache file (JSONL)")


def _build_encoder(args, dim: int) -> CachedEmbedder:
    if args.embedder == "remote":
        if not args.embed_model:
            raise SystemExit("--embed-model is required with --embedder remote")
        provider = RemoteEmbedder(model=args.embed_model, dim=dim)
    else:
        provider = StubEmbedder(dim=dim, seed=args.embed_seed)
    cache = EmbeddingCache.load(args.cache) if args.cache else None
    return CachedEmbedder(provider, cache)


def _add_search_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--iters", type=int, default=30, help="search iterations per question")
    parser.add_argument("--top-k", type=int, default=3, help="relations kept per expansion")
    parser.add_argument("--max-len", type=int, default=4, help="maximum reasoning path length")
    parser.add_argument("--c", type=float, default=math.sqrt(2.0), help="exploration constant")
    parser.add_argument("--mode", choices=["literal-avg", "classic-sum"], default="literal-avg")
    parser.add_argument("--finetune-period", type=int, default=1,
                        help="iterations between online fine-tune steps (0 disables)")
    parser.add_argument("--finetune-pairs", type=int, default=8)
    parser.add_argument("--finetune-lr", type=float, default=1e-5)
    parser.add_argument("--branch-cap", type=int, default=16)
    parser.add_argument("--top-m", type=int, default=10, help="answers returned per question")
    parser.add_argument("--seed", type=int, default=0)


def _search_config(args) -> SearchConfig:
    return SearchConfig(
        iterations=args.iters,
        top_k=args.top_k,
        max_path_len=args.max_len,
        exploration=args.c,
        backprop_mode=args.mode,
        finetune_period=args.finetune_period,
        finetune_pairs=args.finetune_pairs,
        branch_cap=args.branch_cap,
        answer_top_m=args.top_m,
        finetune_lr=args.finetune_lr,
    )


def _add_planner_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--planner", choices=["llm", "sim", "mock"], default="sim")
    parser.add_argument("--llm-model", default="", help="chat model for --planner llm")
    parser.add_argument("--mock-noise", type=float, default=0.0,
                        help="gold-relation demotion probability of the mock planner")


def _planner_factory(args, encoder, gold_paths):
    def make():
        if args.planner == "llm":
            if not args.llm_model:
                raise SystemExit("--llm-model is required with --planner llm")
            return LlmPlanner(ChatClient(model=args.llm_model), encoder)
        if args.planner == "mock":
            return MockPlanner(gold_paths, demote_prob=args.mock_noise, seed=args.seed)
        return SimilarityPlanner(encoder)

    return make


def _cmd_synth(args) -> int:
    spec = SynthSpec(
        entities=args.entities,
        relation_types=args.relations,
        questions=args.questions,
        path_length=args.path_len,
        branching=args.branch,
        seed=args.seed,
    )
    kg, items = generate_synthetic(spec)
    kg.save(args.out_kg)
    save_dataset(items, args.out_data)
    print(json.dumps({
        "entities": kg.num_entities,
        "relations": kg.num_relations,
        "triples": kg.num_triples,
        "questions": len(items),
        "kg": args.out_kg,
        "data": args.out_data,
    }))
    return 0


def _cmd_pretrain(args) -> int:
    kg = load_kg(args.kg, include_inverse=args.include_inverse)
    items = load_dataset(args.train)
    encoder = _build_encoder(args, args.embed_dim)
    mining = MiningConfig(
        max_hops=args.max_hops,
        hard_per_positive=args.hard_per_pos,
        random_per_positive=args.rand_per_pos,
        seed=args.seed,
    )
    triplets = []
    skipped = 0
    for item in items:
        topic_ids = [kg.entity_id(t) for t in item.topic_entities if kg.has_entity(t)]
        answer_ids = [kg.entity_id(a) for a in item.answers if kg.has_entity(a)]
        mined = mine_triplets(kg, item.question, topic_ids, answer_ids, encoder, mining)
        if not mined:
            skipped += 1
        triplets.extend(mined)
    if not triplets:
        raise SystemExit("no trainable triplets mined from the dataset")
    scorer = PathScorer(
        embed_dim=args.embed_dim,
        model_dim=args.model_dim,
        num_layers=args.layers,
        num_heads=args.heads,
        max_path_len=args.max_path_len,
        learning_rate=args.lr,
        epochs=args.epochs,
        batch_size=args.batch_size,
        random_state=args.seed,
    ).fit(triplets)
    scorer.save(args.out)
    if args.cache:
        encoder.cache.save(args.cache)
    print(json.dumps({
        "triplets": len(triplets),
        "skipped_questions": skipped,
        "epochs": args.epochs,
        "final_loss": scorer.loss_curve_[-1] if scorer.loss_curve_ else None,
        "checkpoint": args.out,
    }))
    return 0


def _cmd_answer(args) -> int:
    kg = load_kg(args.kg, include_inverse=args.include_inverse)
    scorer = PathScorer.load(args.ckpt)
    encoder = _build_encoder(args, scorer.embed_dim)
    topics = [t.strip() for t in args.topics.split(",") if t.strip()]
    if not topics:
        raise SystemExit("--topics must name at least one entity")
    topic_ids = [kg.entity_id(t) for t in topics]
    config = _search_config(args)
    planner = _planner_factory(args, encoder, gold_paths={})()
    result = search(kg, args.question, topic_ids, planner, scorer, encoder, config, seed=args.seed)
    print(json.dumps(result.to_dict(), sort_keys=True, indent=2))
    if args.cache:
        encoder.cache.save(args.cache)
    return 0


def _cmd_eval(args) -> int:
    kg = load_kg(args.kg, include_inverse=args.include_inverse)
    dataset = load_dataset(args.data)
    scorer = PathScorer.load(args.ckpt)
    encoder = _build_encoder(args, scorer.embed_dim)
    config = _search_config(args)
    gold = oracle_paths(kg, dataset, config.max_path_len) if args.planner == "mock" else {}
    report = evaluate(
        kg,
        dataset,
        _planner_factory(args, encoder, gold),
        scorer,
        encoder,
        config,
        seed=args.seed,
        workers=args.workers,
        carry_scorer=args.carry_scorer,
        timing=args.timing,
    )
    if args.out:
        report.save(args.out)
        print(json.dumps(report.aggregate, sort_keys=True))
    else:
        sys.stdout.write(report.to_json())
    if args.cache:
        encoder.cache.save(args.cache)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="damr",
        description="Knowledge-graph QA: planner-guided tree search with a trainable path scorer.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a synthetic benchmark")
    p_synth.add_argument("--entities", type=int, default=200)
    p_synth.add_argument("--relations", type=int, default=20)
    p_synth.add_argument("--questions", type=int, default=50)
    p_synth.add_argument("--path-len", type=int, default=3)
    p_synth.add_argument("--branch", type=int, default=4)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--out-kg", required=True)
    p_synth.add_argument("--out-data", required=True)
    p_synth.set_defaults(func=_cmd_synth)

    p_pre = sub.add_parser("pretrain", help="mine triplets and pretrain the path scorer")
    p_pre.add_argument("--kg", required=True)
    p_pre.add_argument("--train", required=True, help="QA dataset (JSONL)")
    p_pre.add_argument("--out", required=True, help="checkpoint output path")
    p_pre.add_argument("--epochs", type=int, default=15)
    p_pre.add_argument("--lr", type=float, default=1e-4)
    p_pre.add_argument("--seed", type=int, default=0)
    p_pre.add_argument("--batch-size", type=int, default=32)
    p_pre.add_argument("--embed-dim", type=int, default=1024)
    p_pre.add_argument("--model-dim", type=int, default=128)
    p_pre.add_argument("--layers", type=int, default=2)
    p_pre.add_argument("--heads", type=int, default=4)
    p_pre.add_argument("--max-path-len", type=int, default=8)
    p_pre.add_argument("--max-hops", type=int, default=4, help="positive mining hop limit")
    p_pre.add_argument("--hard-per-pos", type=int, default=1)
    p_pre.add_argument("--rand-per-pos", type=int, default=1)
    p_pre.add_argument("--include-inverse", action="store_true")
    _add_embedder_args(p_pre)
    p_pre.set_defaults(func=_cmd_pretrain)

    p_ans = sub.add_parser("answer", help="answer one question")
    p_ans.add_argument("--kg", required=True)
    p_ans.add_argument("--ckpt", required=True)
    p_ans.add_argument("--question", required=True)
    p_ans.add_argument("--topics", required=True, help="comma-separated topic entity labels")
    p_ans.add_argument("--include-inverse", action="store_true")
    _add_search_args(p_ans)
    _add_planner_args(p_ans)
    _add_embedder_args(p_ans)
    p_ans.set_defaults(func=_cmd_answer)

    p_eval = sub.add_parser("eval", help="evaluate over a QA dataset")
    p_eval.add_argument("--kg", required=True)
    p_eval.add_argument("--data", required=True)
    p_eval.add_argument("--ckpt", required=True)
    p_eval.add_argument("--workers", type=int, default=1)
    p_eval.add_argument("--out", default=None, help="report file (JSON)")
    p_eval.add_argument("--carry-scorer", action="store_true",
                        help="keep fine-tuning the same scorer across questions")
    p_eval.add_argument("--timing", action="store_true",
                        help="add wall-clock fields (makes reports non-reproducible)")
    p_eval.add_argument("--include-inverse", action="store_true")
    _add_search_args(p_eval)
    _add_planner_args(p_eval)
    _add_embedder_args(p_eval)
    p_eval.set_defaults(func=_cmd_eval)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
