"""``cowrieqa`` command line: gen, train, eval, serve, run, report."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import signal
import sys
import threading
from pathlib import Path
from typing import List, Optional, Sequence

from . import loggen, model, qaeval, sinkmetrics
from .pipeline import ConfigError, Pipeline, PipelineConfig

log = logging.getLogger("cowrieqa")


class CliError(Exception):
    """One-line diagnostic, exit status 1."""


def _write_json(path: str | Path, obj) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, ensure_ascii=False)
        fh.write("\n")


def _read_jsonl(path: str | Path) -> List[dict]:
    rows = []
    try:
        with open(path, encoding="utf-8") as fh:
            for n, line in enumerate(fh, 1):
                if line.strip():
                    try:
                        rows.append(json.loads(line))
                    except ValueError as exc:
                        raise CliError(f"{path}:{n}: invalid JSON ({exc})") from exc
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror}") from exc
    return rows


def _parse_sizes(text: str) -> tuple:
    try:
        sizes = tuple(int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected three comma-separated integers, got {text!r}") from None
    if len(sizes) != 3 or any(s < 0 for s in sizes):
        raise argparse.ArgumentTypeError(f"expected three non-negative integers, got {text!r}")
    return sizes


# ---------------------------------------------------------------- subcommands

def cmd_gen(args) -> int:
    out = Path(args.out)
    cfg = loggen.GeneratorConfig(seed=args.seed, n_sessions=args.sessions, days=args.days)
    result = loggen.generate_corpus(cfg, out / "logs")
    loggen.write_labels(out / "labels.jsonl", result.labels)
    manifest = {
        "seed": args.seed,
        "sessions": args.sessions,
        "events": result.n_events,
        "commands": len(result.labels),
        "unique_commands": len({item.context for item in result.labels}),
        "log_files": [p.relative_to(out).as_posix() for p in result.files],
        "labels": "labels.jsonl",
    }
    if not args.no_split:
        sizes = args.split_sizes
        if sizes is None:
            sizes = loggen.proportional_sizes(manifest["unique_commands"])
            if sizes != loggen.REFERENCE_SPLIT_SIZES:
                log.warning("only %d unique commands; scaling split to %s", manifest["unique_commands"], sizes)
        try:
            split = loggen.make_split(result.labels, sizes, seed=args.split_seed)
        except loggen.InsufficientData as exc:
            raise CliError(f"cannot split: {exc}") from exc
        manifest["split"] = loggen.write_split(split, out / "split")
    _write_json(out / "manifest.json", manifest)
    print(f"wrote {result.n_events} events in {len(result.files)} files, "
          f"{len(result.labels)} labeled commands ({manifest['unique_commands']} unique) to {out}")
    return 0


def cmd_train(args) -> int:
    train_set = loggen.read_labels(args.train)
    val_set = loggen.read_labels(args.val) if args.val else []
    hyper = model.Hyper(epochs=args.epochs, seed=args.seed)
    try:
        m, report = model.train(train_set, val_set, hyper)
    except model.EmptyTrainingSet as exc:
        raise CliError(str(exc)) from exc
    model.save(m, args.model_path)
    if args.report_path:
        _write_json(args.report_path, report.to_dict())
    f1 = ", ".join(f"{x:.5f}" for x in report.val_f1) or "n/a"
    print(f"trained on {report.train_examples} examples for {report.epochs_run} epochs "
          f"in {report.wall_time:.1f}s; validation F1 per epoch: {f1}; model {m.version}")
    return 0


def cmd_eval(args) -> int:
    if args.pred:
        rows = _read_jsonl(args.pred)
        preds = [str(r.get("prediction", "")) for r in rows]
        contexts = [r.get("context") for r in rows]
        golds_rows = _read_jsonl(args.gold) if args.gold else rows
        if args.gold and len(golds_rows) == len(rows):
            for n, (a, b) in enumerate(zip(rows, golds_rows), 1):
                if a.get("context") is not None and b.get("context") is not None and a["context"] != b["context"]:
                    raise CliError(f"line {n}: prediction and gold contexts differ")
    else:
        if not args.gold:
            raise CliError("eval needs --gold (and --pred, or a model via --model-path/--backend)")
        golds_rows = _read_jsonl(args.gold)
        extractor = _load_extractor(args.backend, args.model_path)
        contexts = [r["context"] for r in golds_rows]
        preds = [extractor.predict(c).answer for c in contexts]
        rows = [{"context": c, "answer": g.get("answer", ""), "prediction": p}
                for c, g, p in zip(contexts, golds_rows, preds)]
        if args.out_pred:
            with open(args.out_pred, "w", encoding="utf-8", newline="\n") as fh:
                for r in rows:
                    fh.write(json.dumps(r, ensure_ascii=False) + "\n")
    if any("answer" not in r for r in golds_rows):
        raise CliError("gold rows need an 'answer' field")
    try:
        report = qaeval.evaluate(preds, [r["answer"] for r in golds_rows])
    except (qaeval.LengthMismatch, qaeval.EmptyEval) as exc:
        raise CliError(str(exc)) from exc
    if args.report_path:
        _write_json(args.report_path, report.to_dict(include_examples=args.per_example))
    print(f"n={report.n_examples} mean_f1={report.mean_f1:.5f} mean_em={report.mean_em:.5f}")
    return 0


def _load_extractor(backend: str, model_path: Optional[str]):
    try:
        return model.load_extractor(backend, model_path)
    except (OSError, model.ModelError, ValueError) as exc:
        raise CliError(f"cannot load model: {exc}") from exc


def cmd_serve(args) -> int:
    from . import server

    try:
        srv = server.start(args.bind, args.model_path, backend=args.backend, workers=args.workers, background=False)
    except (OSError, model.ModelError, ValueError) as exc:
        raise CliError(f"cannot start server: {exc}") from exc
    stop = threading.Event()

    def handle(signum, frame):
        stop.set()
        threading.Thread(target=srv.shutdown, daemon=True).start()

    signal.signal(signal.SIGTERM, handle)
    signal.signal(signal.SIGINT, handle)
    print(f"serving {srv.manager.version} on {srv.url}", flush=True)
    try:
        srv.serve_forever()
    finally:
        srv.server_close()
        srv.manager.close()
    return 0


def _emit_report(report: sinkmetrics.DashboardReport, report_path: Optional[str], figures_dir: Optional[str],
                 no_figures: bool) -> None:
    if report_path:
        Path(report_path).parent.mkdir(parents=True, exist_ok=True)
        sinkmetrics.write_report(report, report_path)
    if not no_figures and (figures_dir or report_path):
        from .plots import render_figures

        target = Path(figures_dir) if figures_dir else Path(report_path).parent
        prefix = "" if figures_dir else Path(report_path).stem + "_"
        render_figures(report, target, prefix=prefix)
    sys.stdout.write(report.to_text())


def cmd_run(args) -> int:
    overrides = {f.name: getattr(args, f.name, None) for f in dataclasses.fields(PipelineConfig)}
    if args.local:
        overrides["inference_url"] = ""
    try:
        cfg = PipelineConfig.load(args.config, **overrides)
    except ConfigError as exc:
        raise CliError(str(exc)) from exc
    try:
        pipe = Pipeline(cfg)
    except (OSError, model.ModelError, ValueError) as exc:
        raise CliError(f"cannot start pipeline: {exc}") from exc
    stop = threading.Event()

    def handle(signum, frame):
        log.info("signal %d: draining", signum)
        stop.set()

    signal.signal(signal.SIGTERM, handle)
    signal.signal(signal.SIGINT, handle)
    result = pipe.run(stop, once=args.once)
    s = result.stats
    print(f"lines={result.lines_read} documents={result.documents_written} direct={s.direct} "
          f"inference={s.to_inference} enriched={s.enriched} inference_errors={s.inference_errors} "
          f"dropped={s.dropped}", flush=True)
    if result.report is not None:
        _emit_report(result.report, cfg.report_path, cfg.figures_dir, args.no_figures)
    return 0


def cmd_report(args) -> int:
    try:
        docs = sinkmetrics.read_bulk(args.bulk)
    except OSError as exc:
        raise CliError(f"cannot read {args.bulk}: {exc.strerror}") from exc
    except (ValueError, KeyError) as exc:
        raise CliError(f"bad bulk file {args.bulk}: {exc}") from exc
    report = sinkmetrics.render_report(docs, args.top_k, args.bucket_hours)
    _emit_report(report, args.report_path, args.figures_dir, args.no_figures)
    return 0


# ---------------------------------------------------------------- parser

def _add_config_flags(p: argparse.ArgumentParser) -> None:
    """One ``--flag`` per PipelineConfig key; unset flags leave the config value alone."""
    for f in dataclasses.fields(PipelineConfig):
        flag = "--" + f.name.replace("_", "-")
        default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
        if f.name == "drop_fields":
            p.add_argument(flag, dest=f.name, nargs="*", default=None,
                           help=f"extra fields removed during normalization (default: {' '.join(default)})")
            continue
        kind = type(default) if default is not None else str
        p.add_argument(flag, dest=f.name, type=kind, default=None, help=f"(default: {default})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cowrieqa", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic Cowrie corpus, labels and split")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--sessions", type=int, default=2000)
    p.add_argument("--days", type=int, default=29)
    p.add_argument("--out", default="corpus")
    p.add_argument("--split-sizes", type=_parse_sizes, default=None,
                   help="train,validation,test (default 32801,3645,999, scaled down for small corpora)")
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--no-split", action="store_true")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train the perceptron extractor")
    p.add_argument("--train", required=True)
    p.add_argument("--val")
    p.add_argument("--model-path", required=True)
    p.add_argument("--report-path")
    p.add_argument("--epochs", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="token-F1 / exact-match evaluation")
    p.add_argument("--pred", help="JSON-lines with context/prediction (and answer)")
    p.add_argument("--gold", help="JSON-lines with context/answer")
    p.add_argument("--model-path")
    p.add_argument("--backend", choices=("perceptron", "rule"), default="perceptron")
    p.add_argument("--out-pred", help="write predictions made by the model here")
    p.add_argument("--report-path")
    p.add_argument("--per-example", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", help="run the inference server")
    p.add_argument("--bind", default="127.0.0.1:8000")
    p.add_argument("--model-path")
    p.add_argument("--backend", choices=("perceptron", "rule"), default="perceptron")
    p.add_argument("--workers", type=int, default=4)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("run", help="tail logs, transform, infer and write bulk output")
    p.add_argument("--config", help="JSON config file; flags override its keys")
    _add_config_flags(p)
    p.add_argument("--local", action="store_true", help="predict in-process instead of calling the server")
    p.add_argument("--once", action="store_true", help="stop once the current log content is processed")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="dashboard aggregates from an existing bulk file")
    p.add_argument("--bulk", required=True)
    p.add_argument("--report-path")
    p.add_argument("--figures-dir")
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--top-k", type=int, default=sinkmetrics.TOP_K)
    p.add_argument("--bucket-hours", type=float, default=sinkmetrics.BUCKET_HOURS)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except CliError as exc:
        print(f"cowrieqa {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"cowrieqa {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
