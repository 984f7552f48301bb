"""Command-line entry point.

Subcommands: gen-data, train, sweep, evaluate, contrastive, diagnose,
stats. Every run directory gets a manifest recording the command, the
resolved configuration, the seed and input digests, so identical inputs
reproduce identical outputs. Exit codes: 0 success, 1 usage error, 2
runtime failure; errors go to stderr as one JSON object per line.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import corpus as corpus_mod
from . import evaluation as evl
from . import stats as stats_mod
from . import synth
from .model import TransformerModel, build_batch
from .trainer import (DEFAULT_SWEEP, ConfigError, TrainConfig, cd_sweep,
                      config_from_sources, parse_config_text, train)

SUMMARY_JSON = "summary.json"


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(out_dir: Path, command: str, config: dict, seed,
                    inputs: list[Path], outputs: list[Path]) -> None:
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": {str(p): _digest(p) for p in inputs if p.exists()},
        "outputs": [str(p) for p in outputs],
        "version": __version__,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def _require_empty(out_dir: Path, force: bool) -> None:
    if out_dir.exists() and any(out_dir.iterdir()) and not force:
        raise UsageError(f"output directory {out_dir} is not empty; use --force to overwrite")


def _parse_sizes(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part]
    except ValueError:
        raise UsageError(f"bad size list {text!r}; expected comma-separated integers") from None


def _load_run(run_dir: Path, checkpoint: str | None, data_dir: Path):
    vocab = corpus_mod.Vocab.load(run_dir / "vocab.json")
    ckpt_path = Path(checkpoint) if checkpoint else run_dir / "ckpt_avg.bin"
    model = TransformerModel.load(ckpt_path, expect_vocab_digest=vocab.digest)
    return model, vocab, ckpt_path


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(args) -> int:
    out_dir = Path(args.out)
    _require_empty(out_dir, args.force)
    out_dir.mkdir(parents=True, exist_ok=True)
    docs, examples = synth.gen_synthetic(
        args.seed, n_docs=args.docs, sentences_per_doc=args.sentences,
        vocab_size=args.vocab_size, inter_sentential_rate=args.rate,
        window_size=args.window_size, amb_rate=args.amb_rate,
        noun_rate=args.noun_rate)
    ratios = tuple(int(x) for x in args.split.split("/"))
    if len(ratios) != 3:
        raise UsageError(f"bad split {args.split!r}; expected like 80/10/10")
    train_docs, dev_docs, test_docs = corpus_mod.split_documents(docs, ratios)
    dev_ids = {d.doc_id for d in dev_docs}
    test_ids = {d.doc_id for d in test_docs}
    dev_examples = [e for e in examples if e.doc_id in dev_ids]
    test_examples = [e for e in examples if e.doc_id in test_ids]

    outputs = []
    for name, payload in (("train.txt", train_docs), ("dev.txt", dev_docs),
                          ("test.txt", test_docs)):
        corpus_mod.write_corpus(out_dir / name, payload)
        outputs.append(out_dir / name)
    for name, payload in (("contrastive_dev.jsonl", dev_examples),
                          ("contrastive_test.jsonl", test_examples)):
        corpus_mod.write_contrastive(out_dir / name, payload)
        outputs.append(out_dir / name)
    flags = {k: v for k, v in vars(args).items() if k != "func"}
    _write_manifest(out_dir, "gen-data", flags, args.seed, [], outputs)
    print(f"documents: train={len(train_docs)} dev={len(dev_docs)} test={len(test_docs)}")
    print(f"contrastive examples: dev={len(dev_examples)} test={len(test_examples)}")
    inter = sum(1 for e in examples if e.distance >= 1)
    print(f"inter-sentential fraction: {inter / max(1, len(examples)):.3f}")
    return 0


def _train_config_from_args(args) -> TrainConfig:
    file_values = {}
    inputs = []
    if args.config:
        path = Path(args.config)
        file_values = parse_config_text(path.read_text())
        inputs.append(path)
    overrides = {}
    for key in ("data_dir", "out_dir", "seed", "k", "cd", "label_smoothing", "layers",
                "heads", "hidden", "ffn", "dropout", "max_window", "max_len",
                "position_scheme", "shift_strategy", "segment_variant", "peak_lr",
                "lr_scale", "warmup", "batch_tokens", "max_epochs", "max_steps",
                "patience", "val_interval", "ckpt_avg", "dtype"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    config = config_from_sources(file_values, overrides)
    if not config.data_dir or not config.out_dir:
        raise UsageError("data_dir and out_dir are required (flags or config file)")
    return config


def cmd_train(args) -> int:
    config = _train_config_from_args(args)
    out_dir = Path(config.out_dir)
    if not args.resume:
        _require_empty(out_dir, args.force)
    result = train(config, resume=args.resume)
    from dataclasses import asdict
    data = Path(config.data_dir)
    _write_manifest(out_dir, "train", asdict(config), config.seed,
                    [data / "train.txt", data / "dev.txt"],
                    [result.averaged_checkpoint, result.best_checkpoint, result.log_path])
    model = TransformerModel.load(result.averaged_checkpoint)
    if model.config.position_scheme == "shifted" and model.config.shift_value is not None:
        print(f"segment shift: {model.config.shift_value} "
              f"({model.config.shift_strategy})")
    print(f"run dir: {result.run_dir}")
    print(f"best step: {result.best_step} (stopped_early={result.stopped_early})")
    print(f"averaged checkpoint: {result.averaged_checkpoint}")
    return 0


def cmd_sweep(args) -> int:
    config = _train_config_from_args(args)
    out_dir = Path(config.out_dir)
    if not out_dir.exists() or not any(out_dir.iterdir()) or args.force:
        out_dir.mkdir(parents=True, exist_ok=True)
    else:
        raise UsageError(f"output directory {out_dir} is not empty; use --force to overwrite")
    values = [float(v) for v in args.cd_values.split(",")] if args.cd_values else list(DEFAULT_SWEEP)
    rows = cd_sweep(config, values)
    table = out_dir / "sweep.csv"
    cols = ["cd", "best_dev_current_loss", "contrastive_accuracy", "attention_mass",
            "attention_entropy", "run_dir", "error"]
    with open(table, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=cols)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in cols})
    from dataclasses import asdict
    _write_manifest(out_dir, "sweep", asdict(config), config.seed, [], [table])
    for row in rows:
        print(row)
    print(f"sweep table: {table}")
    return 0


def cmd_evaluate(args) -> int:
    run_dir = Path(args.run)
    data = Path(args.data)
    model, vocab, ckpt_path = _load_run(run_dir, args.checkpoint, data)
    docs = corpus_mod.read_corpus(data / f"{args.split}.txt")
    if args.limit:
        docs = docs[:args.limit]
    examples = None
    contrastive_path = data / f"contrastive_{args.split}.jsonl"
    if contrastive_path.exists():
        examples = corpus_mod.read_contrastive(contrastive_path)
        doc_ids = {d.doc_id for d in docs}
        examples = [e for e in examples if e.doc_id in doc_ids]
    sizes = _parse_sizes(args.window_sizes) if args.window_sizes else \
        [model.config.window_size]
    rows = evl.robustness_eval(model, docs, vocab, sizes, examples=examples,
                               beam=args.beam, alpha=args.alpha)

    report_dir = Path(args.report_dir) if args.report_dir else run_dir
    report_dir.mkdir(parents=True, exist_ok=True)
    table = report_dir / f"robustness_{args.split}.csv"
    with open(table, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["size", "bleu", "accuracy", "malformed", "n_windows"])
        for r in rows:
            writer.writerow([r.size, repr(r.bleu),
                             "" if r.accuracy is None else repr(r.accuracy),
                             r.malformed, r.n_windows])
    # per-sentence hypotheses for significance testing
    for size in sizes:
        hyps, refs, _ = evl.decode_current_sentences(model, docs, vocab, size,
                                                     beam=args.beam, alpha=args.alpha)
        hp = report_dir / f"hyps_{args.split}_k{size}.txt"
        hp.write_text("".join(" ".join(h) + "\n" for h in hyps))
        (report_dir / f"refs_{args.split}.txt").write_text(
            "".join(" ".join(r) + "\n" for r in refs))
    summary = {
        "checkpoint": str(ckpt_path),
        "split": args.split,
        "beam": args.beam,
        "alpha": args.alpha,
        "rows": [vars(r) for r in rows],
    }
    (report_dir / f"evaluate_{args.split}.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True))
    for r in rows:
        acc = "" if r.accuracy is None else f" accuracy={r.accuracy:.2f}"
        print(f"size={r.size} bleu={r.bleu:.2f}{acc} malformed={r.malformed}/{r.n_windows}")
    print(f"robustness table: {table}")
    return 0


def cmd_contrastive(args) -> int:
    run_dir = Path(args.run)
    data = Path(args.data)
    model, vocab, ckpt_path = _load_run(run_dir, args.checkpoint, data)
    examples = corpus_mod.read_contrastive(data / f"contrastive_{args.split}.jsonl")
    if args.limit:
        examples = examples[:args.limit]
    results = evl.evaluate_contrastive(model, examples, vocab, mode=args.mode)
    results = sorted(results, key=lambda r: r.example_id)
    report = evl.aggregate(results, by=args.by)

    report_dir = Path(args.report_dir) if args.report_dir else run_dir
    report_dir.mkdir(parents=True, exist_ok=True)
    per_example = report_dir / f"contrastive_{args.split}_examples.csv"
    with open(per_example, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["example_id", "chosen", "correct", "phenomenon",
                         "distance", "scores"])
        for r in results:
            writer.writerow([r.example_id, r.chosen, int(r.correct), r.phenomenon,
                             r.distance, ";".join(repr(s) for s in r.scores)])
    per_category = report_dir / f"contrastive_{args.split}_categories.csv"
    with open(per_category, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["category", "accuracy", "n"])
        for label, (acc, n) in report.per_category.items():
            writer.writerow([label, repr(acc), n])
    overall = 100.0 * sum(r.correct for r in results) / len(results)
    summary = {
        "checkpoint": str(ckpt_path),
        "split": args.split,
        "mode": args.mode,
        "by": args.by,
        "overall_accuracy": overall,
        "disc": report.disc,
        "disc_avg": report.disc_avg,
        "disc_all_d": report.disc_all_d,
        "per_category": {k: {"accuracy": a, "n": n}
                         for k, (a, n) in report.per_category.items()},
        "excluded": report.excluded,
    }
    (report_dir / f"contrastive_{args.split}.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True))
    print(f"overall accuracy: {overall:.2f} over {len(results)} examples")
    print(f"disc: {report.disc:.2f} disc_avg: {report.disc_avg:.2f} "
          f"disc_all_d: {report.disc_all_d if report.disc_all_d is None else round(report.disc_all_d, 2)}")
    for label, (acc, n) in report.per_category.items():
        print(f"  category {label}: {acc:.2f} (n={n})")
    return 0


def cmd_diagnose(args) -> int:
    run_dir = Path(args.run)
    data = Path(args.data)
    model, vocab, ckpt_path = _load_run(run_dir, args.checkpoint, data)
    docs = corpus_mod.read_corpus(data / f"{args.split}.txt")
    k = args.k if args.k else model.config.window_size
    windows = [w for d in docs for w in corpus_mod.make_windows(d, k, vocab)]
    if args.limit:
        windows = windows[:args.limit]
    records = []
    from .objective import smoothed_nll
    cur_sum = ctx_sum = 0.0
    cur_tok = ctx_tok = 0
    per_window = []
    for lo in range(0, len(windows), 32):
        batch = build_batch(windows[lo:lo + 32], model.config)
        log_probs, recs = model.forward(batch, capture=True)
        records.extend(recs)
        per_tok = smoothed_nll(log_probs, batch.tgt_out, 0.1, batch.tgt_valid).data
        for i, w in enumerate(batch.windows):
            cur = float((per_tok[i] * batch.current_mask[i]).sum())
            ctx = float((per_tok[i] * batch.context_mask[i]).sum())
            cur_sum += cur
            ctx_sum += ctx
            cur_tok += int(batch.current_mask[i].sum())
            ctx_tok += int(batch.context_mask[i].sum())
            per_window.append((cur, ctx, w.size - 1))
    entropy_rows = evl.attention_entropy_rows(records)
    mass = evl.current_attention_mass(records)
    ctx_means = [c / n for _, c, n in per_window if n >= 1]
    cur_means = [c for c, _, _ in per_window]
    ratio = (float(np.mean(cur_means)) / float(np.mean(ctx_means))) if ctx_means else float("nan")

    series = []
    log_path = run_dir / "log.csv"
    if log_path.exists():
        lines = log_path.read_text().strip().splitlines()
        for line in lines[1:]:
            epoch, step, cur, ctx, rt, cd = line.split(",")
            series.append({"epoch": int(epoch), "step": int(step),
                           "current_loss": float(cur), "context_loss": float(ctx),
                           "ratio": float(rt), "cd": float(cd)})

    report_dir = Path(args.report_dir) if args.report_dir else run_dir
    report_dir.mkdir(parents=True, exist_ok=True)
    ent_path = report_dir / f"entropies_{args.split}.csv"
    ent_path.write_text("".join(repr(float(e)) + "\n" for e in entropy_rows))
    summary = {
        "checkpoint": str(ckpt_path),
        "split": args.split,
        "attention_entropy": float(entropy_rows.mean()),
        "attention_mass": mass,
        "dev_current_loss": cur_sum / max(1, cur_tok),
        "dev_context_loss": ctx_sum / ctx_tok if ctx_tok else None,
        "loss_ratio": ratio,
        "n_windows": len(windows),
        "series": series,
    }
    (report_dir / f"diagnose_{args.split}.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True))
    print(f"attention entropy: {summary['attention_entropy']:.4f}")
    print(f"attention mass on current sentence: {mass:.4f}")
    print(f"current loss: {summary['dev_current_loss']:.4f} ratio: {ratio:.4f}")
    print(f"per-query entropies: {ent_path}")
    return 0


def _read_correct_column(path: Path) -> dict[str, bool]:
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out[row["example_id"]] = bool(int(row["correct"]))
    return out


def _read_scores(path: Path) -> list[float]:
    values = []
    for line in path.read_text().splitlines():
        line = line.strip()
        if line:
            values.append(float(line))
    return values


def cmd_stats(args) -> int:
    if args.test == "mcnemar":
        a = _read_correct_column(Path(args.a))
        b = _read_correct_column(Path(args.b))
        if set(a) != set(b):
            raise UsageError("result files cover different example ids")
        ids = sorted(a)
        res = stats_mod.mcnemar([a[i] for i in ids], [b[i] for i in ids])
        payload = {"test": "mcnemar", "n": len(ids), "b": res.b, "c": res.c,
                   "statistic": res.statistic, "p_value": res.p_value}
    elif args.test == "ar":
        scores_a = _read_scores(Path(args.a))
        scores_b = _read_scores(Path(args.b))
        perms = args.permutations or 1000
        p = stats_mod.approx_randomization(scores_a, scores_b, perms, args.seed)
        payload = {"test": "ar", "n": len(scores_a), "permutations": perms,
                   "p_value": p, "mean_a": float(np.mean(scores_a)),
                   "mean_b": float(np.mean(scores_b))}
    elif args.test == "ar-bleu":
        if not args.refs:
            raise UsageError("ar-bleu needs --refs")
        refs = [line.split() for line in Path(args.refs).read_text().splitlines()]
        hyps_a = [line.split() for line in Path(args.a).read_text().splitlines()]
        hyps_b = [line.split() for line in Path(args.b).read_text().splitlines()]
        stats_a = [evl.bleu_stats(h, r) for h, r in zip(hyps_a, refs)]
        stats_b = [evl.bleu_stats(h, r) for h, r in zip(hyps_b, refs)]
        perms = args.permutations or 10000
        p = stats_mod.paired_bleu_randomization(stats_a, stats_b, perms, args.seed)
        payload = {"test": "ar-bleu", "n": len(refs), "permutations": perms,
                   "p_value": p, "bleu_a": evl.bleu_from_stats(stats_a),
                   "bleu_b": evl.bleu_from_stats(stats_b)}
    else:
        raise UsageError(f"unknown test {args.test!r}")
    print(json.dumps(payload, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# argument wiring


def build_parser() -> _Parser:
    parser = _Parser(prog="winmt", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate the synthetic discourse corpus")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=1)
    g.add_argument("--docs", type=int, default=synth.DEFAULT_DOCS)
    g.add_argument("--sentences", type=int, default=synth.DEFAULT_SENTENCES)
    g.add_argument("--vocab-size", type=int, default=synth.DEFAULT_VOCAB)
    g.add_argument("--rate", type=float, default=synth.DEFAULT_RATE)
    g.add_argument("--window-size", type=int, default=2)
    g.add_argument("--amb-rate", type=float, default=0.4)
    g.add_argument("--noun-rate", type=float, default=0.55)
    g.add_argument("--split", default="80/10/10")
    g.add_argument("--force", action="store_true")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train one model into a run directory")
    t.add_argument("--config", help="flat key = value config file")
    t.add_argument("--data", dest="data_dir")
    t.add_argument("--out", dest="out_dir")
    t.add_argument("--resume", action="store_true")
    t.add_argument("--force", action="store_true")
    for key, typ in (("seed", int), ("k", int), ("cd", float), ("label-smoothing", float),
                     ("layers", int), ("heads", int), ("hidden", int), ("ffn", int),
                     ("dropout", float), ("max-window", int), ("max-len", int),
                     ("peak-lr", float), ("lr-scale", float), ("warmup", int),
                     ("batch-tokens", int), ("max-epochs", int), ("max-steps", int),
                     ("patience", int), ("val-interval", int), ("ckpt-avg", int)):
        t.add_argument(f"--{key}", type=typ, default=None,
                       dest=key.replace("-", "_"))
    t.add_argument("--position-scheme", choices=["plain", "shifted"], default=None,
                   dest="position_scheme")
    t.add_argument("--shift-strategy", default=None, dest="shift_strategy")
    t.add_argument("--segment-variant", choices=["none", "sin", "learned"], default=None,
                   dest="segment_variant")
    t.add_argument("--dtype", choices=["float32", "float64"], default=None)
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sweep", help="train one model per context discount")
    s.add_argument("--config")
    s.add_argument("--data", dest="data_dir")
    s.add_argument("--out", dest="out_dir")
    s.add_argument("--cd-values", help="comma-separated discounts; default full sweep")
    s.add_argument("--force", action="store_true")
    for key, typ in (("seed", int), ("k", int), ("hidden", int), ("layers", int),
                     ("heads", int), ("ffn", int), ("dropout", float),
                     ("max-epochs", int), ("max-steps", int), ("patience", int),
                     ("val-interval", int), ("warmup", int), ("batch-tokens", int),
                     ("peak-lr", float)):
        s.add_argument(f"--{key}", type=typ, default=None, dest=key.replace("-", "_"))
    s.set_defaults(func=cmd_sweep)

    e = sub.add_parser("evaluate", help="BLEU and window-size robustness")
    e.add_argument("--run", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--checkpoint")
    e.add_argument("--split", choices=["dev", "test"], default="test")
    e.add_argument("--window-sizes", help="comma-separated, e.g. 2,3,4")
    e.add_argument("--beam", type=int, default=4)
    e.add_argument("--alpha", type=float, default=0.6)
    e.add_argument("--limit", type=int, help="cap the number of documents")
    e.add_argument("--report-dir")
    e.set_defaults(func=cmd_evaluate)

    c = sub.add_parser("contrastive", help="accuracy on a contrastive set")
    c.add_argument("--run", required=True)
    c.add_argument("--data", required=True)
    c.add_argument("--checkpoint")
    c.add_argument("--split", choices=["dev", "test"], default="test")
    c.add_argument("--mode", choices=["full", "current"], default="full")
    c.add_argument("--by", choices=["distance", "phenomenon"], default="distance")
    c.add_argument("--limit", type=int)
    c.add_argument("--report-dir")
    c.set_defaults(func=cmd_contrastive)

    d = sub.add_parser("diagnose", help="attention entropy, mass and loss ratio")
    d.add_argument("--run", required=True)
    d.add_argument("--data", required=True)
    d.add_argument("--checkpoint")
    d.add_argument("--split", choices=["dev", "test"], default="dev")
    d.add_argument("--k", type=int, help="window size; defaults to the training size")
    d.add_argument("--limit", type=int, default=200, help="cap the number of windows")
    d.add_argument("--report-dir")
    d.set_defaults(func=cmd_diagnose)

    st = sub.add_parser("stats", help="significance tests between two result files")
    st.add_argument("--test", choices=["mcnemar", "ar", "ar-bleu"], required=True)
    st.add_argument("--a", required=True)
    st.add_argument("--b", required=True)
    st.add_argument("--refs", help="reference file for ar-bleu")
    st.add_argument("--permutations", type=int)
    st.add_argument("--seed", type=int, default=1)
    st.set_defaults(func=cmd_stats)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1
    except Exception as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
