"""Command-line entry point.

Each subcommand wraps one library operation. Settings come from an optional
JSON config file (``--config``); explicit flags override it. Failures print
one JSON object on stderr and exit 1 (usage), 2 (data) or 3 (teacher).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from . import __version__
from .categories import OOV, parse_prediction
from .config import PipelineConfig, load_config, provenance, sidecar, write_json
from .corpus import (
    DEFAULT_KEYWORDS,
    LabelSource,
    SyntheticSpec,
    corpus_stats,
    generate_synthetic,
    load_corpus,
    parse_timestamp,
    record_to_row,
    write_corpus,
)
from .distill import (
    CachedTeacher,
    LocalOracle,
    MixSpec,
    RemoteCompletion,
    TeacherLabel,
    TeacherLabelSet,
    accuracy_curve,
    build_mixed_set,
    distillation_run,
    label_unlabeled,
)
from .errors import PartialResult, WebcatError
from .evaluation import compute_metrics, drift_report, write_drift_csv
from .experiment import window_config
from .models import EXPOSE, TRANSFORMER, load_checkpoint, predict, save_checkpoint, train
from .signatures import SignatureDb, apply_signatures, coverage_by_popularity, load_signatures, save_signatures
from .splits import PARTITIONS, SplitConfig, SplitMode, build_split, read_split, split_frequency_report, write_split
from .tokenize import CharVocab, SubwordVocab, train_subword_vocab

log = logging.getLogger("webcat")


class UsageError(WebcatError):
    exit_code = 1


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True, ensure_ascii=False) + "\n")


def _need(value, flag: str):
    if value is None:
        raise UsageError(f"{flag} is required (flag or config file)")
    return value


def _existing(value, flag: str) -> Path:
    p = Path(_need(value, flag))
    if not p.exists():
        raise UsageError(f"{flag}: path does not exist: {p}")
    return p


# ---------------------------------------------------------------------------
# subcommands


def cmd_ingest(args, cfg: PipelineConfig) -> None:
    src = _existing(args.input, "--input")
    records = load_corpus(src, args.format)
    inputs = {"input": src}
    if cfg.paths.signatures:
        sig = _existing(cfg.paths.signatures, "--signatures")
        inputs["signatures"] = sig
        db = load_signatures(sig)
        done = [r for r in records if r.label is not None]
        labeled, unlabeled = apply_signatures(db, [r for r in records if r.label is None])
        records = sorted(done + labeled + unlabeled, key=lambda r: (r.url_first_seen, r.normalized_url))
    out = Path(_need(args.out or cfg.paths.corpus, "--out"))
    write_corpus(records, out)
    stats = corpus_stats(records, args.top_k)
    write_json(sidecar(out), provenance(cfg, inputs, records=len(records), top_domains=stats.top_domains))
    _emit({"records": len(records), "labeled": sum(r.label is not None for r in records), "out": str(out)})


def cmd_gen_synth(args, cfg: PipelineConfig) -> None:
    spec = SyntheticSpec(
        head_domain_count=args.head_domains,
        tail_domain_count=args.tail_domains,
        zipf_exponent=args.zipf,
        keywordless_fraction=args.keywordless,
        seed=cfg.seed,
        n_records=args.records,
    )
    records = generate_synthetic(spec)
    out = Path(_need(args.out or cfg.paths.corpus, "--out"))
    write_corpus(records, out)
    extra = {"records": len(records), "synthetic": {k: getattr(spec, k) for k in
             ("head_domain_count", "tail_domain_count", "zipf_exponent", "keywordless_fraction", "n_records")}}
    if args.signatures_out:
        db = SignatureDb.from_labeled_records(records)
        save_signatures(db, args.signatures_out)
        extra["signature_rules"] = len(db)
    write_json(sidecar(out), provenance(cfg, {}, **extra))
    _emit({"records": len(records), "out": str(out)})


def _split_config(records, cfg: PipelineConfig) -> SplitConfig:
    s = cfg.split
    mode = SplitMode(s.mode)
    if s.train_end and s.val_end and s.test_end:
        return SplitConfig(parse_timestamp(s.train_end), parse_timestamp(s.val_end), parse_timestamp(s.test_end),
                           mode, s.max_urls_per_domain)
    if s.train_end or s.val_end or s.test_end:
        raise UsageError("give all of --train-end, --val-end and --test-end, or none")
    return window_config(records, mode, max_urls_per_domain=s.max_urls_per_domain)


def cmd_split(args, cfg: PipelineConfig) -> None:
    corpus = _existing(args.corpus or cfg.paths.corpus, "--corpus")
    records = load_corpus(corpus)
    split = build_split(records, _split_config(records, cfg))
    out_dir = Path(_need(args.out_dir or cfg.paths.split_dir, "--out-dir"))
    prov = provenance(cfg, {"corpus": corpus}, frequency=split_frequency_report(split, args.top_k))
    prov.pop("seed")
    write_split(split, out_dir, seed=cfg.seed, extra=prov)
    _emit({name: len(part) for name, part in split.partitions().items()} | {"out_dir": str(out_dir)})


def _train_urls(args, cfg) -> tuple[list[str], dict]:
    if args.split_dir or cfg.paths.split_dir:
        path = _existing(args.split_dir or cfg.paths.split_dir, "--split-dir") / "train.jsonl"
    else:
        path = _existing(args.corpus or cfg.paths.corpus, "--corpus")
    return [r.normalized_url for r in load_corpus(path)], {"train": path}


def cmd_train_vocab(args, cfg: PipelineConfig) -> None:
    urls, inputs = _train_urls(args, cfg)
    vocab = train_subword_vocab(urls, args.size)
    out = Path(_need(args.out or cfg.paths.vocab, "--out"))
    vocab.save(out)
    write_json(sidecar(out), provenance(cfg, inputs, size=vocab.size))
    _emit({"size": vocab.size, "sha256": vocab.digest(), "out": str(out)})


def _tokenizer(kind: str, vocab_path) -> CharVocab | SubwordVocab:
    if kind == EXPOSE:
        return CharVocab()
    return SubwordVocab.load(_existing(vocab_path, "--vocab"))


def cmd_train(args, cfg: PipelineConfig) -> None:
    split_dir = _existing(args.split_dir or cfg.paths.split_dir, "--split-dir")
    train_path = Path(args.train) if args.train else split_dir / "train.jsonl"
    train_records = load_corpus(_existing(train_path, "--train"))
    val_records = load_corpus(split_dir / "validation.jsonl")
    tok = _tokenizer(args.kind, args.vocab or cfg.paths.vocab)
    model, history = train(
        args.kind, train_records, val_records, tokenizer=tok, epochs=args.epochs, batch_size=args.batch_size,
        learning_rate=args.lr, seed=cfg.seed, patience=args.patience,
    )
    out = Path(_need(args.out or cfg.paths.checkpoint, "--out"))
    save_checkpoint(model, out)
    inputs = {"train": train_path, "validation": split_dir / "validation.jsonl"}
    write_json(sidecar(out), provenance(cfg, inputs, model_id=model.model_id, val_accuracy=history.val_accuracy,
                                        train_loss=history.train_loss, best_epoch=history.best_epoch))
    _emit({"model_id": model.model_id, "best_epoch": history.best_epoch, "best_val_accuracy": history.best_val_accuracy, "out": str(out)})


def _teacher(cfg: PipelineConfig):
    t = cfg.teacher
    if t.kind == "local":
        inner = LocalOracle(DEFAULT_KEYWORDS, t.noise_rate, cfg.seed)
    elif t.kind == "remote":
        inner = RemoteCompletion(
            _need(t.endpoint, "--endpoint"), model=t.model, token_env=t.token_env, max_retries=t.max_retries,
            backoff_seconds=t.backoff_seconds, max_parallel=t.max_parallel,
        )
    else:
        raise UsageError(f"unknown teacher kind {t.kind!r}")
    return CachedTeacher(inner, cfg.paths.cache) if cfg.paths.cache else inner


def _write_labels(label_set: TeacherLabelSet, out: Path) -> None:
    """Teacher labels as corpus rows plus the raw answer; OOV rows kept with label null."""
    with out.open("w", encoding="utf-8") as fh:
        for e in label_set.entries:
            oov = e.parsed is OOV
            rec = e.record.with_label(None if oov else e.parsed, LabelSource.NONE if oov else LabelSource.TEACHER)
            row = record_to_row(rec) | {"teacher_raw": e.raw, "teacher_id": label_set.teacher_id}
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def _read_labels(path: Path) -> TeacherLabelSet:
    records = load_corpus(path, "jsonl")
    rows = [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]
    entries = [TeacherLabel(r.with_label(None, LabelSource.NONE), parse_prediction(row["teacher_raw"]), row["teacher_raw"])
               for r, row in zip(records, rows)]
    return TeacherLabelSet(entries, rows[0]["teacher_id"] if rows else "")


def cmd_teacher_label(args, cfg: PipelineConfig) -> None:
    src = _existing(args.input, "--input")
    pool = [r for r in load_corpus(src) if r.label is None]
    teacher = _teacher(cfg)
    out = Path(_need(args.out, "--out"))
    try:
        labels = label_unlabeled(teacher, pool, cfg.teacher.batch_size)
    except PartialResult as exc:
        _write_labels(exc.completed, out)
        raise
    _write_labels(labels, out)
    write_json(sidecar(out), provenance(cfg, {"input": src}, teacher_id=teacher.teacher_id,
                                        labeled=len(labels.entries), oov_excluded=labels.oov_excluded))
    _emit({"labeled": len(labels.entries), "oov_excluded": labels.oov_excluded, "teacher_id": teacher.teacher_id, "out": str(out)})


def _base_records(path: Path):
    return [r for r in load_corpus(path) if r.label is not None]


def cmd_mix(args, cfg: PipelineConfig) -> None:
    base_path = _existing(args.base, "--base")
    labels_path = _existing(args.teacher_labels, "--teacher-labels")
    ratio = _need(args.ratio, "--ratio")
    spec = MixSpec(_need(cfg.mix.total, "--total"), ratio, cfg.seed)
    mixed = build_mixed_set(_base_records(base_path), _read_labels(labels_path), spec)
    out = Path(_need(args.out, "--out"))
    write_corpus(mixed, out)
    write_json(sidecar(out), provenance(cfg, {"base": base_path, "teacher_labels": labels_path}, total=spec.total,
                                        ratio=spec.ratio, teacher_count=spec.teacher_count, base_count=spec.base_count))
    _emit({"total": spec.total, "teacher": spec.teacher_count, "base": spec.base_count, "out": str(out)})


def cmd_distill_sweep(args, cfg: PipelineConfig) -> None:
    split_dir = _existing(args.split_dir or cfg.paths.split_dir, "--split-dir")
    labels_path = _existing(args.teacher_labels, "--teacher-labels")
    split = read_split(split_dir)
    tok = _tokenizer(args.kind, args.vocab or cfg.paths.vocab)
    base = [r for r in split.train if r.label is not None]
    results = distillation_run(
        _read_labels(labels_path), base, [], args.kind, cfg.mix.ratios, split, tokenizer=tok, total=cfg.mix.total,
        seed=cfg.seed, epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.lr, patience=args.patience,
    )
    out = Path(_need(args.out, "--out"))
    write_json(out, {
        "curve": accuracy_curve(results),
        "reports": [r.report.to_json() for r in results],
        "provenance": provenance(cfg, {"split_train": split_dir / "train.jsonl", "teacher_labels": labels_path}),
    })
    _emit({"curve": accuracy_curve(results), "out": str(out)})


def cmd_evaluate(args, cfg: PipelineConfig) -> None:
    ckpt = _existing(args.checkpoint or cfg.paths.checkpoint, "--checkpoint")
    split_dir = _existing(args.split_dir or cfg.paths.split_dir, "--split-dir")
    part = split_dir / f"{args.partition}.jsonl"
    records = [r for r in load_corpus(_existing(part, "--partition")) if r.truth is not None]
    model = load_checkpoint(ckpt)
    pred = [c for c, _ in predict(model, [r.normalized_url for r in records])]
    report = compute_metrics([r.truth for r in records], pred, {
        "model_id": model.model_id, "split": f"{split_dir.name}/{args.partition}", "sample_count": len(records),
    })
    out = Path(_need(args.out, "--out"))
    report.write(out, args.csv)
    _emit({"accuracy": report.accuracy, "macro_f1": report.macro_f1, "out": str(out)})


def cmd_drift(args, cfg: PipelineConfig) -> None:
    vocab_path = _existing(args.vocab or cfg.paths.vocab, "--vocab")
    ref_path, probe_path = _existing(args.reference, "--reference"), _existing(args.probe, "--probe")
    vocab = SubwordVocab.load(vocab_path)
    probe = [r.normalized_url for r in load_corpus(probe_path)]
    report = drift_report(vocab, [r.normalized_url for r in load_corpus(ref_path)], probe, args.eps, args.bins)
    out = Path(_need(args.out, "--out"))
    write_json(out, report.to_json() | {"provenance": provenance(cfg, {"vocab": vocab_path, "reference": ref_path, "probe": probe_path})})
    if args.csv:
        write_drift_csv(report, probe, args.csv, vocab)
    _emit({"mean": report.mean, "median": report.median, "count": len(report.values), "out": str(out)})


def cmd_coverage(args, cfg: PipelineConfig) -> None:
    corpus = _existing(args.corpus or cfg.paths.corpus, "--corpus")
    sig = _existing(args.signatures or cfg.paths.signatures, "--signatures")
    report = coverage_by_popularity(load_signatures(sig), corpus_stats(load_corpus(corpus)), args.bin_base)
    data = {
        "bin_base": report.bin_base,
        "bins": [{"low": b.low, "high": b.high, "exponent": b.exponent, "labeled_proportion": b.labeled_proportion,
                  "domain_count": b.domain_count} for b in report.bins],
    }
    if args.out:
        write_json(args.out, data | {"provenance": provenance(cfg, {"corpus": corpus, "signatures": sig})})
    _emit(data)


def _local_classifier(cfg: PipelineConfig, need_model: bool):
    from .service import Classifier

    db = load_signatures(_existing(cfg.paths.signatures, "--signatures")) if cfg.paths.signatures else SignatureDb()
    model = None
    if cfg.paths.checkpoint:
        model = load_checkpoint(_existing(cfg.paths.checkpoint, "--checkpoint"))
    elif need_model:
        raise UsageError("--checkpoint is required to serve")
    return Classifier(db, model)


def cmd_classify(args, cfg: PipelineConfig) -> None:
    urls = list(args.url or [])
    if args.input:
        urls += [line.strip() for line in Path(_existing(args.input, "--input")).read_text().splitlines() if line.strip()]
    if not urls:
        raise UsageError("give --url or --input")
    if args.server:
        import httpx

        with httpx.Client(base_url=args.server, timeout=30.0) as client:
            for u in urls:
                resp = client.get("/classify", params={"url": u})
                if resp.status_code >= 400:
                    raise UsageError(f"server answered {resp.status_code}: {resp.text}") if resp.status_code == 400 \
                        else WebcatError(f"server answered {resp.status_code}: {resp.text}")
                _emit(resp.json())
        return
    clf = _local_classifier(cfg, need_model=False)
    for u in urls:
        try:
            _emit(clf.classify(u).model_dump())
        except LookupError as exc:
            raise UsageError(f"{exc}; pass --checkpoint for model fallback") from exc


def cmd_serve(args, cfg: PipelineConfig) -> None:
    import uvicorn

    from .service import create_app

    _existing(cfg.paths.checkpoint, "--checkpoint")
    app = create_app(lambda: _local_classifier(cfg, need_model=True))
    uvicorn.run(app, host=cfg.server.host, port=cfg.server.port, log_level="info", timeout_graceful_shutdown=30)


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override it")
    common.add_argument("--seed", type=int, help="random seed recorded in every artifact")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="webcat", description="URL content categorization toolkit")
    p.add_argument("--version", action="version", version=f"webcat {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, fn, help_text):
        sp = sub.add_parser(name, parents=[common], help=help_text)
        sp.set_defaults(func=fn)
        return sp

    sp = add("ingest", cmd_ingest, "normalize a raw telemetry file and apply signatures")
    sp.add_argument("--input", required=True)
    sp.add_argument("--format", choices=["jsonl", "csv"])
    sp.add_argument("--signatures")
    sp.add_argument("--out")
    sp.add_argument("--top-k", type=int, default=10)

    sp = add("gen-synth", cmd_gen_synth, "generate a synthetic long-tail corpus")
    sp.add_argument("--out")
    sp.add_argument("--records", type=int, default=10_000)
    sp.add_argument("--head-domains", type=int, default=25)
    sp.add_argument("--tail-domains", type=int, default=20_000)
    sp.add_argument("--zipf", type=float, default=1.1)
    sp.add_argument("--keywordless", type=float, default=0.1)
    sp.add_argument("--signatures-out", help="also write head-domain signature rules (TSV)")

    sp = add("split", cmd_split, "build a time or domain-and-time split")
    sp.add_argument("--corpus")
    sp.add_argument("--mode", choices=[m.value for m in SplitMode])
    sp.add_argument("--train-end")
    sp.add_argument("--val-end")
    sp.add_argument("--test-end")
    sp.add_argument("--max-per-domain", type=int)
    sp.add_argument("--out-dir")
    sp.add_argument("--top-k", type=int, default=10)

    sp = add("train-vocab", cmd_train_vocab, "train the subword vocabulary")
    sp.add_argument("--split-dir")
    sp.add_argument("--corpus")
    sp.add_argument("--size", type=int, default=8192)
    sp.add_argument("--out")

    def training_flags(sp):
        sp.add_argument("--kind", choices=[TRANSFORMER, EXPOSE], default=TRANSFORMER)
        sp.add_argument("--vocab")
        sp.add_argument("--epochs", type=int, default=20)
        sp.add_argument("--batch-size", type=int, default=256)
        sp.add_argument("--lr", type=float, default=1e-3)
        sp.add_argument("--patience", type=int, default=3)

    sp = add("train", cmd_train, "train a student checkpoint")
    sp.add_argument("--split-dir")
    sp.add_argument("--train", help="training records (default: <split-dir>/train.jsonl)")
    sp.add_argument("--out")
    training_flags(sp)

    sp = add("teacher-label", cmd_teacher_label, "label the unlabeled records of a file with the teacher")
    sp.add_argument("--input", required=True)
    sp.add_argument("--out")
    sp.add_argument("--teacher", choices=["local", "remote"])
    sp.add_argument("--endpoint")
    sp.add_argument("--noise", type=float)
    sp.add_argument("--cache")
    sp.add_argument("--batch-size", type=int)
    sp.add_argument("--max-parallel", type=int)

    sp = add("mix", cmd_mix, "build a mixed training set at one ratio")
    sp.add_argument("--base", required=True)
    sp.add_argument("--teacher-labels", required=True)
    sp.add_argument("--total", type=int)
    sp.add_argument("--ratio", type=float)
    sp.add_argument("--out")

    sp = add("distill-sweep", cmd_distill_sweep, "train and score one student per mixing ratio")
    sp.add_argument("--split-dir")
    sp.add_argument("--teacher-labels", required=True)
    sp.add_argument("--ratios", type=lambda s: [float(x) for x in s.split(",") if x.strip()])
    sp.add_argument("--total", type=int)
    sp.add_argument("--out")
    training_flags(sp)

    sp = add("evaluate", cmd_evaluate, "score a checkpoint on a split partition")
    sp.add_argument("--checkpoint")
    sp.add_argument("--split-dir")
    sp.add_argument("--partition", choices=PARTITIONS, default="test")
    sp.add_argument("--out")
    sp.add_argument("--csv")

    sp = add("drift", cmd_drift, "per-URL KL divergence against a reference token histogram")
    sp.add_argument("--vocab")
    sp.add_argument("--reference", required=True)
    sp.add_argument("--probe", required=True)
    sp.add_argument("--eps", type=float, default=1e-9)
    sp.add_argument("--bins", type=int, default=50)
    sp.add_argument("--out")
    sp.add_argument("--csv")

    sp = add("coverage", cmd_coverage, "signature coverage by domain popularity")
    sp.add_argument("--corpus")
    sp.add_argument("--signatures")
    sp.add_argument("--bin-base", type=float, default=10.0)
    sp.add_argument("--out")

    sp = add("classify", cmd_classify, "classify URLs locally or through a running server")
    sp.add_argument("--url", action="append")
    sp.add_argument("--input", help="file with one URL per line")
    sp.add_argument("--signatures")
    sp.add_argument("--checkpoint")
    sp.add_argument("--server", help="base URL of a running server; classify remotely")

    sp = add("serve", cmd_serve, "run the classification server")
    sp.add_argument("--signatures")
    sp.add_argument("--checkpoint")
    sp.add_argument("--host")
    sp.add_argument("--port", type=int)
    return p


# flag name -> dotted config key
_OVERRIDES = {
    "seed": "seed",
    "signatures": "paths.signatures",
    "checkpoint": "paths.checkpoint",
    "cache": "paths.cache",
    "mode": "split.mode",
    "train_end": "split.train_end",
    "val_end": "split.val_end",
    "test_end": "split.test_end",
    "max_per_domain": "split.max_urls_per_domain",
    "total": "mix.total",
    "ratios": "mix.ratios",
    "teacher": "teacher.kind",
    "endpoint": "teacher.endpoint",
    "noise": "teacher.noise_rate",
    "max_parallel": "teacher.max_parallel",
    "host": "server.host",
    "port": "server.port",
}


def resolve_config(args: argparse.Namespace) -> PipelineConfig:
    cfg = load_config(args.config)
    overrides = {key: getattr(args, flag) for flag, key in _OVERRIDES.items() if hasattr(args, flag)}
    if args.command == "teacher-label" and getattr(args, "batch_size", None) is not None:
        overrides["teacher.batch_size"] = args.batch_size
    return cfg.override(overrides)


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = resolve_config(args)
        args.func(args, cfg)
        return 0
    except WebcatError as exc:
        code = exc.exit_code
        err = exc
    except (OSError, ValueError, KeyError) as exc:
        code, err = 2, exc
    sys.stderr.write(json.dumps({"error": type(err).__name__, "message": str(err), "exit_code": code}) + "\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
