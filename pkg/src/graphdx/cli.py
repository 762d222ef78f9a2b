"""Command-line entry points: data generation, training, evaluation, retrieval
index building, interactive diagnosis, and the HTTP service."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .artifacts import (
    load_checkpoint,
    load_toml,
    save_checkpoint,
    train_config_from_dict,
    train_config_to_dict,
)
from .gcn import FULL, VARIANTS, GcnVariant, variant_with_caps
from .graph import NodeKind, load_records
from .retrieval import CooccurrenceStats, RetrievalConfig, RetrievalIndex, train_retrieval
from .harness import (
    SyntheticSpec,
    evaluate_ranking,
    format_table,
    gen_synthetic,
    metrics_jsonl,
    run_benchmark,
    split_users,
    training_graph,
)
from .session import SessionConfig
from .trainer import GcnModel, MfModel, history_to_jsonl, train


def cmd_gen_data(args) -> int:
    spec_cfg = load_toml(args.spec).get("synthetic", {}) if args.spec else {}
    spec = SyntheticSpec(**spec_cfg)
    lines, ledger = gen_synthetic(spec)
    Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    ledger_path = args.ledger or (args.out + ".ledger.json")
    Path(ledger_path).write_text(json.dumps(ledger, sort_keys=True), encoding="utf-8")
    print(f"wrote {len(lines)} records to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg_all = load_toml(args.config) if args.config else {}
    cfg = train_config_from_dict(cfg_all.get("train", {}))
    variant = VARIANTS[args.variant]
    variant = variant_with_caps(variant, cfg_all.get("caps", {}))

    g_full = load_records(args.data)
    split = split_users(g_full, seed=args.split_seed)
    g = training_graph(g_full, split)

    if args.model == "mf":
        model = MfModel()
    else:
        model = GcnModel(variant)
    params = model.init(g, cfg)
    params, history = train(params, g, split, cfg, model=model)

    save_checkpoint(
        args.out,
        params,
        g.id_map_digest(),
        train_config=train_config_to_dict(cfg) | {"split_seed": args.split_seed, "model": args.model},
        variant=variant.name if args.model != "mf" else "mf",
    )
    hist_path = args.history or (args.out + ".history.jsonl")
    Path(hist_path).write_text(history_to_jsonl(history), encoding="utf-8")
    if args.train_records:
        _write_records(g, args.train_records)
    print(f"trained {len(history)} epochs; best val nDCG@5 "
          f"{max(h['val_ndcg5'] for h in history):.4f}; checkpoint at {args.out}")
    return 0


def _write_records(g, path):
    lines = []
    users = g.ids[NodeKind.USER]
    syms = g.ids[NodeKind.SYMPTOM]
    diss = g.ids[NodeKind.DISEASE]
    for rec in g.records:
        lines.append(
            f"{users[rec.user]}\t"
            + ",".join(diss[d] for d in rec.diseases)
            + "\t"
            + ",".join(syms[s] for s in rec.symptoms)
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_retrieve_train(args) -> int:
    g = load_records(args.data)
    params, meta = load_checkpoint(args.checkpoint)
    if meta["graph_digest"] != g.id_map_digest():
        raise SystemExit("checkpoint was trained against a different graph")
    cfg_all = load_toml(args.config) if args.config else {}
    rc = cfg_all.get("retrieval", {})
    cfg = RetrievalConfig(**{k: v for k, v in rc.items() if k in RetrievalConfig.__dataclass_fields__})
    index = train_retrieval(params, g, cfg)
    index.save(args.out, manifest=(
        f"graphdx retrieval index\nsymptoms: {index.embeddings.shape[0]}\n"
        f"dim: {index.embeddings.shape[1]}\ngraph digest: {index.graph_digest}\n"
    ))
    print(f"retrieval index at {args.out}")
    return 0


def cmd_eval(args) -> int:
    g_full = load_records(args.data)
    split = split_users(g_full, seed=args.split_seed)
    g = training_graph(g_full, split)
    params, meta = load_checkpoint(args.checkpoint)
    if meta["graph_digest"] != g.id_map_digest():
        raise SystemExit("checkpoint was trained against a different graph/split")
    if meta.get("variant") == "mf":
        model = MfModel()
    else:
        model = GcnModel(VARIANTS[meta.get("variant", "full")])
    queries = split.resolve_test_queries(g)
    metrics = evaluate_ranking(model, params, g, queries, seed=args.seed)
    report = run_benchmark({meta.get("variant", "full"): metrics})
    text = format_table(report)
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text(metrics_jsonl(report), encoding="utf-8")
    return 0


def cmd_diagnose(args) -> int:
    from .service import EngineArtifacts, SessionStore, DiagnosisEngine
    from .session import AliasTable, COLLECTING

    g = load_records(args.data)
    params, meta = load_checkpoint(args.checkpoint)
    index = RetrievalIndex.load(args.index)
    stats = CooccurrenceStats.from_graph(g)
    aliases = AliasTable.load(args.aliases, g) if args.aliases else AliasTable.identity(g)
    scfg = SessionConfig()
    variant = VARIANTS.get(meta.get("variant", "full"), FULL)
    art = EngineArtifacts(params, variant, g, index, stats, aliases, scfg)
    engine = DiagnosisEngine(art, SessionStore(":memory:"))

    print("describe your symptoms (comma-separated):")
    phrases = [p.strip() for p in input("> ").split(",") if p.strip()]
    session, mapped, unmapped = engine.open(phrases)
    if unmapped:
        print(f"unrecognized: {', '.join(unmapped)}")
    syms = g.ids[NodeKind.SYMPTOM]
    diss = g.ids[NodeKind.DISEASE]
    print(f"recognized: {', '.join(syms[i] for i in mapped)}")
    while session.status == COLLECTING:
        session, sugg = engine.suggestions(session.session_id)
        if session.status != COLLECTING:
            break
        print("do any of these apply? (numbers, empty for none)")
        for i, s in enumerate(sugg):
            print(f"  [{i}] {syms[s]}")
        raw = input("> ").strip()
        chosen = [sugg[int(tok)] for tok in raw.split() if tok.isdigit() and int(tok) < len(sugg)]
        session = engine.answer(session.session_id, chosen)
        print(f"confidence: {session.confidence:.3f}")
    print("diagnosis:" + (" (low confidence)" if session.low_confidence else ""))
    for d, p in session.top:
        print(f"  {diss[d]}: {p:.3f}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import build_engine_from_config, create_app

    config = load_toml(args.config) if args.config else {}
    engine = build_engine_from_config(config, base_dir=Path(args.config).parent if args.config else ".")
    static = config.get("paths", {}).get("static")
    if static:
        static = Path(args.config).parent / static
    app = create_app(engine, static_dir=static)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="graphdx")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic record corpus")
    g.add_argument("--spec", help="TOML file with a [synthetic] table")
    g.add_argument("--out", required=True)
    g.add_argument("--ledger")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train the ranker")
    t.add_argument("--data", required=True)
    t.add_argument("--config", help="TOML file with a [train] table")
    t.add_argument("--out", required=True)
    t.add_argument("--history")
    t.add_argument("--variant", default="full", choices=sorted(VARIANTS))
    t.add_argument("--model", default="gcn", choices=["gcn", "mf"])
    t.add_argument("--split-seed", type=int, default=0)
    t.add_argument("--train-records", help="also write the training-user records")
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("retrieve-train", help="build the retrieval index")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--data", required=True, help="training-user records")
    r.add_argument("--config")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_retrieve_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True, help="full record corpus")
    e.add_argument("--split-seed", type=int, default=0)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", help="metric records JSONL")
    e.set_defaults(func=cmd_eval)

    d = sub.add_parser("diagnose", help="interactive terminal diagnosis")
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--index", required=True)
    d.add_argument("--data", required=True, help="serving records")
    d.add_argument("--aliases")
    d.set_defaults(func=cmd_diagnose)

    s = sub.add_parser("serve", help="run the HTTP service")
    s.add_argument("--config", help="service TOML config")
    s.add_argument("--port", type=int, default=8000)
    s.add_argument("--host", default="127.0.0.1")
    s.set_defaults(func=cmd_serve)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
