"""Command line: ``aac-lwf {synth,pretrain,continual,sweep,evaluate}``.

Exit codes: 0 ok, 2 usage or file format, 3 vocabulary or other semantic
mismatch, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import shlex
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig, load_config
from .data.dataset import CaptionDataset, read_manifest
from .data.synth import write_synthetic
from .data.vocab import EncodeStats, Vocabulary, build_vocabulary, intersect_vocabulary
from .errors import (ConfigError, DataError, InvariantError, MismatchError, NumericError, ParameterError,
                     VocabularyError)
from .metrics import EVAL_REPORT_SCHEMA, EvalReport, ExternalScorer, evaluate_dataset
from .model import WaveTransformer, params_digest
from .plotting import plot_loss_trace, plot_pretrain_log, plot_sweep
from .trainer import LossBreakdown, continual_run, pretrain

log = logging.getLogger("aac_lwf")

EXIT_OK, EXIT_USAGE, EXIT_SEMANTIC, EXIT_NUMERIC = 0, 2, 3, 4
SWEEP_COLUMNS = ("batch_size", "lambda", "spider_ori", "spider_new", "status")


# ---------------------------------------------------------------- helpers

def _run_config(args) -> RunConfig:
    run = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        run = dataclasses.replace(
            run, seed=args.seed, synth=dataclasses.replace(run.synth, seed=args.seed),
            early_stop=dataclasses.replace(run.early_stop, seed=args.seed),
            continual=dataclasses.replace(run.continual, shuffle_seed=args.seed))
    return run


def _out_dir(args, run: RunConfig) -> Path:
    out = Path(args.out or run.paths.get("out") or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def load_split(path, split: str) -> CaptionDataset:
    """A manifest file, or ``<dir>/<split>.csv`` for a dataset directory."""
    p = Path(path)
    return read_manifest(p if p.suffix == ".csv" else p / f"{split}.csv")


def dataset_vocabulary(data_dir, train: CaptionDataset) -> Vocabulary:
    p = Path(data_dir)
    vfile = (p if p.is_dir() else p.parent) / "vocab.txt"
    return Vocabulary.load(vfile) if vfile.exists() else build_vocabulary(train.captions())


def _dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")


def _lambda(text: str) -> float:
    try:
        lam = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0.0 <= lam <= 1.0:
        raise argparse.ArgumentTypeError(f"lambda must lie in [0, 1], got {lam}")
    return lam


def _lambdas(text: str) -> tuple[float, ...]:
    return tuple(_lambda(t) for t in text.replace(",", " ").split())


def _positive_ints(text: str) -> tuple[int, ...]:
    try:
        vals = tuple(int(t) for t in text.replace(",", " ").split())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected integers: {text!r}") from None
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError("batch sizes must be positive")
    return vals


def _scorer(args):
    cmd = getattr(args, "spice_cmd", None)
    return ExternalScorer(shlex.split(cmd)) if cmd else None


def read_trace(path) -> list[LossBreakdown]:
    """Load ``trace.jsonl``; every row must satisfy the total-loss identity."""
    rows = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            lb = LossBreakdown.from_dict(json.loads(line))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise DataError(f"{path}:{lineno}: malformed trace row: {exc}") from exc
        if not lb.identity_holds():
            raise InvariantError(f"{path}:{lineno}: l_tot != (1 - lambda) * l_new + lambda * l_reg")
        rows.append(lb)
    return rows


# ---------------------------------------------------------------- continual core

@dataclasses.dataclass
class ContinualInputs:
    teacher: Checkpoint
    stream: CaptionDataset
    eval_sets: dict[str, CaptionDataset]
    removed_words: list[str]


def prepare_continual(teacher_path, stream_dir, ori_dir=None, vocab_path=None) -> ContinualInputs:
    teacher = load_checkpoint(teacher_path)
    vocab = teacher.vocab
    if vocab_path is not None:
        given = Vocabulary.load(vocab_path)
        if given != vocab:
            raise VocabularyError(f"{vocab_path} does not match the teacher vocabulary "
                                  f"({len(given)} vs {len(vocab)} tokens)")
    if teacher.model.config.vocab_size != len(vocab):
        raise VocabularyError("teacher output layer does not match its stored vocabulary")
    stream = load_split(stream_dir, "train")
    stream_vocab = dataset_vocabulary(stream_dir, stream)
    inter = intersect_vocabulary(stream_vocab, vocab)
    if inter.n_removed == len(stream_vocab.words):
        raise VocabularyError("stream data shares no words with the teacher vocabulary")
    ori_dir = ori_dir or teacher.extra.get("data")
    if not ori_dir:
        raise ConfigError("original data location unknown; pass --ori-data")
    eval_sets = {"ori": load_split(ori_dir, "test"), "new": load_split(stream_dir, "test")}
    return ContinualInputs(teacher, stream, eval_sets, inter.removed)


def _check_features(model: WaveTransformer, ds: CaptionDataset) -> None:
    n_mels = ds.clips[0].features.shape[1]
    if n_mels != model.config.n_mels:
        raise MismatchError(f"{ds.name}: features have {n_mels} mel bands, model expects {model.config.n_mels}")


def run_continual(inputs: ContinualInputs, cfg, spice_scorer=None, on_step=None):
    m_base = inputs.teacher.model
    for ds in (inputs.stream, *inputs.eval_sets.values()):
        _check_features(m_base, ds)
    stats = EncodeStats()
    examples = inputs.stream.examples(inputs.teacher.vocab, drop_oov=True, stats=stats)
    m_new = m_base.clone()
    result = continual_run(m_base, m_new, examples, cfg, inputs.eval_sets, inputs.teacher.vocab,
                           spice_scorer, on_step)
    if result.teacher_digest_before != result.teacher_digest_after:
        raise InvariantError("teacher parameters changed during adaptation")
    return result, m_new, stats


# ---------------------------------------------------------------- verbs

def cmd_synth(args) -> int:
    run = _run_config(args)
    synth = run.synth
    if args.overlap is not None:
        synth = dataclasses.replace(synth, overlap=args.overlap)
    out = Path(args.out or run.paths.get("data") or "data")
    write_synthetic(synth, out, force=args.force)
    log.info("wrote synthetic datasets to %s", out)
    return EXIT_OK


def cmd_pretrain(args) -> int:
    run = _run_config(args)
    data = args.data or run.paths.get("data")
    if not data:
        raise ConfigError("no training data given (--data)")
    train, val = load_split(data, "train"), load_split(data, "val")
    vocab = dataset_vocabulary(data, train)
    model_kw = dict(run.model)
    model_kw.setdefault("n_mels", int(train.clips[0].features.shape[1]))
    run = dataclasses.replace(run, model=model_kw)
    model = WaveTransformer(run.model_config(len(vocab)), seed=run.seed)
    _check_features(model, train)
    out = _out_dir(args, run)
    log.info("pre-training %d parameters on %d clips", model.n_parameters(), len(train))
    res = pretrain(model, train, val, vocab, run.early_stop, _scorer(args),
                   on_epoch=lambda e: log.info("epoch %d train_ce=%.4f val_spider=%.4f",
                                               e["epoch"], e["train_ce"], e["val_spider"]))
    ckpt = Checkpoint(model, vocab, run.to_dict(), 0, None,
                      {"data": str(Path(data).resolve()), "best_epoch": res.best_epoch})
    save_checkpoint(ckpt, out / "teacher.lwfc")
    _dump_json({"best_epoch": res.best_epoch, "best_val_spider": res.best_score,
                "stopped_early": res.stopped_early, "patience": run.early_stop.patience,
                "epochs": res.log,
                "teacher_digest": params_digest(load_checkpoint(out / "teacher.lwfc").model.params)},
               out / "pretrain_log.json")
    plot_pretrain_log(res.log, out / "pretrain.png")
    print(out / "teacher.lwfc")
    return EXIT_OK


def _continual_cfg(run: RunConfig, lam=None, batch_size=None):
    cfg = run.continual
    if lam is not None:
        cfg = dataclasses.replace(cfg, lam=lam)
    if batch_size is not None:
        cfg = dataclasses.replace(cfg, batch_size=batch_size)
    return cfg


def cmd_continual(args) -> int:
    run = _run_config(args)
    teacher = args.teacher or run.paths.get("teacher")
    stream = args.stream_data or run.paths.get("stream_data")
    if not teacher or not stream:
        raise ConfigError("continual needs --teacher and --stream-data")
    inputs = prepare_continual(teacher, stream, args.ori_data, args.vocab)
    cfg = _continual_cfg(run, args.lam, args.batch_size)
    out = _out_dir(args, run)
    result, m_new, stats = run_continual(inputs, cfg, _scorer(args))
    with open(out / "trace.jsonl", "w", encoding="utf-8", newline="\n") as fh:
        for lb in result.trace:
            fh.write(json.dumps(lb.to_dict(), sort_keys=True) + "\n")
    snaps = []
    for snap in result.snapshots:
        name = f"student_{snap.update_index:05d}.lwfc"
        model = WaveTransformer(m_new.config, None)
        for k, p in model.params.items():
            p.data = snap.params[k].copy()
        save_checkpoint(Checkpoint(model, inputs.teacher.vocab, run.to_dict(), snap.update_index,
                                   extra={"data": inputs.teacher.extra.get("data")}), out / name)
        snaps.append({"update_index": snap.update_index, "final": snap.final, "checkpoint": name,
                      "reports": {k: r.to_dict() for k, r in snap.reports.items()}})
    _dump_json({
        "lambda": cfg.lam, "batch_size": cfg.batch_size, "distill_temperature": cfg.distill_temperature,
        "n_updates": len(result.trace), "teacher_digest_before": result.teacher_digest_before,
        "teacher_digest_after": result.teacher_digest_after, "removed_words": inputs.removed_words,
        "dropped_words": stats.dropped_words, "empty_captions": stats.empty_captions, "snapshots": snaps,
    }, out / "continual.json")
    plot_loss_trace([lb.to_dict() for lb in result.trace], out / "loss.png", cfg.checkpoint_updates)
    final = result.final.reports
    if final:
        print(json.dumps({k: r.spider for k, r in sorted(final.items())}, sort_keys=True))
    return EXIT_OK


def sweep_cell(teacher, stream, ori, cfg, spice_cmd=None) -> dict:
    """One (lambda, B) cell; failures are reported in ``status`` instead of raised."""
    row = {"batch_size": cfg.batch_size, "lambda": cfg.lam, "spider_ori": None, "spider_new": None,
           "n_updates": 0, "status": "ok"}
    try:
        inputs = prepare_continual(teacher, stream, ori)
        scorer = ExternalScorer(shlex.split(spice_cmd)) if spice_cmd else None
        result, _, _ = run_continual(inputs, cfg, scorer)
        reports = result.final.reports
        row.update(spider_ori=reports["ori"].spider, spider_new=reports["new"].spider,
                   n_updates=len(result.trace))
    except NumericError as exc:
        row["status"] = f"numeric_failure: {exc}"
    except (DataError, MismatchError, InvariantError, ParameterError) as exc:
        row["status"] = f"failed: {type(exc).__name__}: {exc}"
    return row


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def sweep_table(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for r in rows:
        w.writerow([r["batch_size"], _fmt(r["lambda"]), _fmt(r["spider_ori"]), _fmt(r["spider_new"]), r["status"]])
    return buf.getvalue()


def cmd_sweep(args) -> int:
    run = _run_config(args)
    teacher = args.teacher or run.paths.get("teacher")
    stream = args.stream_data or run.paths.get("stream_data")
    if not teacher or not stream:
        raise ConfigError("sweep needs --teacher and --stream-data")
    lambdas = args.lambdas or run.sweep_lambdas
    batch_sizes = args.batch_sizes or run.sweep_batch_sizes
    # validate shared inputs once so usage errors fail fast instead of per cell
    prepare_continual(teacher, stream, args.ori_data)
    cells = [_continual_cfg(run, lam, B) for B in batch_sizes for lam in lambdas]
    jobs = max(1, args.jobs)
    call = [(teacher, stream, args.ori_data, c, args.spice_cmd) for c in cells]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            rows = list(pool.map(sweep_cell, *zip(*call)))
    else:
        rows = [sweep_cell(*c) for c in call]
    for r in rows:
        log.info("B=%d lambda=%.2f ori=%s new=%s %s", r["batch_size"], r["lambda"], r["spider_ori"],
                 r["spider_new"], r["status"])
    out = _out_dir(args, run)
    (out / "sweep.csv").write_text(sweep_table(rows), encoding="utf-8", newline="")
    _dump_json({"columns": list(SWEEP_COLUMNS), "rows": rows,
                "teacher_digest": params_digest(load_checkpoint(teacher).model.params)}, out / "sweep.json")
    plot_sweep(rows, out / "sweep.png")
    sys.stdout.write(sweep_table(rows))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    if args.vocab is not None and Vocabulary.load(args.vocab) != ckpt.vocab:
        raise VocabularyError(f"{args.vocab} does not match the checkpoint vocabulary")
    ds = load_split(args.data, args.split)
    _check_features(ckpt.model, ds)
    report = evaluate_dataset(ckpt.model, ds, ckpt.vocab, _scorer(args), update_index=ckpt.update_index)
    text = json.dumps(report.to_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n"
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"eval_{ds.name}_{ds.split}.json").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def load_report(path) -> EvalReport:
    return EvalReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def report_schema() -> dict:
    return EVAL_REPORT_SCHEMA


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value run configuration file")
    common.add_argument("--seed", type=int, help="overrides every seed in the configuration")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="aac-lwf", description="Continual audio captioning with LwF distillation.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="write the synthetic ori/new datasets")
    s.add_argument("--force", action="store_true", help="write into a non-empty directory")
    s.add_argument("--overlap", type=float, help="fraction of shared vocabulary words")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("pretrain", parents=[common], help="train the teacher with early stopping")
    s.add_argument("--data", help="dataset directory with train/val manifests")
    s.add_argument("--spice-cmd", help="external SPICE-like scorer speaking line-delimited JSON")
    s.set_defaults(func=cmd_pretrain)

    for name, func, help_ in (("continual", cmd_continual, "adapt a copy of the teacher on new data"),
                              ("sweep", cmd_sweep, "continual runs over a lambda x batch-size grid")):
        s = sub.add_parser(name, parents=[common], help=help_)
        s.add_argument("--teacher", help="teacher checkpoint (.lwfc)")
        s.add_argument("--stream-data", help="new-data directory; its train split is streamed once")
        s.add_argument("--ori-data", help="original-data directory (default: recorded in the teacher)")
        s.add_argument("--spice-cmd", help="external SPICE-like scorer speaking line-delimited JSON")
        s.set_defaults(func=func)
    cont, sweep = sub.choices["continual"], sub.choices["sweep"]
    cont.add_argument("--lambda", dest="lam", type=_lambda)
    cont.add_argument("--batch-size", type=int)
    cont.add_argument("--vocab", help="vocabulary file the stream was prepared with")
    sweep.add_argument("--lambdas", type=_lambdas)
    sweep.add_argument("--batch-sizes", type=_positive_ints)
    sweep.add_argument("--jobs", type=int, default=1, help="parallel cell processes")

    s = sub.add_parser("evaluate", parents=[common], help="score a checkpoint on a dataset split")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True, help="dataset directory or manifest CSV")
    s.add_argument("--split", default="test")
    s.add_argument("--vocab", help="require this vocabulary file to match the checkpoint")
    s.add_argument("--spice-cmd", help="external SPICE-like scorer speaking line-delimited JSON")
    s.set_defaults(func=cmd_evaluate)
    return p


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, NumericError):
        return EXIT_NUMERIC
    if isinstance(exc, (MismatchError, InvariantError)):
        return EXIT_SEMANTIC
    return EXIT_USAGE


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (NumericError, MismatchError, InvariantError, DataError, ConfigError, ParameterError,
            FileExistsError, OSError) as exc:
        log.error("%s", exc)
        return exit_code_for(exc)


if __name__ == "__main__":
    sys.exit(main())
