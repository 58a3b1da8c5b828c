"""Command line front end: train, eval, inspect, and verify subcommands.

Exit codes: 0 success, 2 configuration problem, 3 data problem, 4 numeric
failure during optimization, 5 verification failure.

The MSHC_THREADS environment variable caps BLAS parallelism. The cap must
land before numpy initializes its thread pools, so it is applied at import
time here; it is fully effective when entering through the ``banter``
console script, which imports this module first.
"""

from __future__ import annotations

import os


def _cap_threads_from_env() -> None:
    value = os.environ.get("MSHC_THREADS", "").strip()
    if not value.isdigit() or int(value) < 1:
        return  # malformed values get a proper exit code in main()
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "VECLIB_MAXIMUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(var, value)


_cap_threads_from_env()

import argparse
import json
import sys
from pathlib import Path

from .data import CorpusError, load_corpus, load_embeddings, split_train_val
from .model import (
    CheckpointError,
    ConfigError,
    ModalityError,
    ModelConfig,
    TASK_MODES,
    build_variant,
    forward_dialog,
    load_checkpoint,
    save_checkpoint,
    variant_label,
)
from .report import export_heatmap, render_report
from .tensor import NumericError
from .train import TrainConfig, evaluate_split, train
from .verify import run_checks

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4
EXIT_VERIFY = 5

# every run-file key, its parser, default, and the line --help prints
CONFIG_KEYS = {
    "corpus": (str, None, "path to the JSON-lines dialog corpus"),
    "embeddings": (str, None, "path to the token embedding text table"),
    "out_dir": (str, "runs", "directory for checkpoint, history, report"),
    "variant": (str, "full", "model variant row name, or 'full'"),
    "task_mode": (str, "joint", "sarcasm, humor, or joint"),
    "d_text_in": (int, 300, "token embedding width the model expects"),
    "d_hidden": (int, 128, "LSTM hidden width per modality"),
    "d_audio": (int, 128, "acoustic encoder output width"),
    "attn_width_tokens": (int, 3, "utterance-level attention window"),
    "attn_width_dialog": (int, 5, "dialog-level attention window"),
    "dropout": (float, 0.4, "rate on utterance reps and head hidden"),
    "head_hidden": (int, 128, "classifier head hidden width"),
    "lr": (float, 1e-3, "Adam learning rate"),
    "batch_size": (int, 32, "dialogs per optimizer step"),
    "max_epochs": (int, 100, "epoch cap"),
    "patience": (int, 10, "epochs without val F1 gain before stopping"),
    "seed": (int, 0, "seed for init, batching, dropout, and the split"),
    "grad_clip": (float, 5.0, "global gradient norm ceiling"),
    "threshold": (float, 0.5, "probability cutoff for positive calls"),
    "val_fraction": (float, 0.1, "dialogs held out for validation"),
}

EVAL_THRESHOLD = 0.5


class CliError(Exception):
    """Carries the exit code alongside the message."""

    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code
        self.message = message


def _convert(key: str, raw: str):
    converter = CONFIG_KEYS[key][0]
    try:
        return converter(raw)
    except ValueError:
        raise CliError(EXIT_CONFIG,
                       f"config key {key!r}: cannot parse {raw!r} "
                       f"as {converter.__name__}") from None


def parse_config_file(path) -> dict[str, str]:
    """Flat key=value lines; '#' comments and blank lines are skipped."""
    path = Path(path)
    if not path.is_file():
        raise CliError(EXIT_CONFIG, f"config file not found: {path}")
    raw: dict[str, str] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(),
                                  start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise CliError(EXIT_CONFIG,
                           f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = stripped.partition("=")
        key, value = key.strip(), value.strip()
        if key not in CONFIG_KEYS:
            raise CliError(EXIT_CONFIG,
                           f"{path}:{lineno}: unknown config key {key!r}; "
                           f"known keys: {', '.join(CONFIG_KEYS)}")
        if key in raw:
            raise CliError(EXIT_CONFIG,
                           f"{path}:{lineno}: duplicate config key {key!r}")
        raw[key] = value
    return raw


def resolve_settings(config_path, overrides: dict) -> dict:
    """Defaults, then the config file, then non-None flag overrides."""
    settings = {key: default for key, (_, default, _) in CONFIG_KEYS.items()}
    if config_path is not None:
        for key, raw in parse_config_file(config_path).items():
            settings[key] = _convert(key, raw)
    for key, value in overrides.items():
        if value is not None:
            settings[key] = value
    return settings


def _model_config(settings: dict) -> ModelConfig:
    try:
        return build_variant(
            settings["variant"],
            task_mode=settings["task_mode"],
            d_text_in=settings["d_text_in"],
            d_hidden=settings["d_hidden"],
            d_audio=settings["d_audio"],
            attn_width_tokens=settings["attn_width_tokens"],
            attn_width_dialog=settings["attn_width_dialog"],
            dropout=settings["dropout"],
            head_hidden=settings["head_hidden"],
        )
    except ConfigError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None


def _load_corpus_checked(path_str: str):
    try:
        return load_corpus(path_str)
    except CorpusError as exc:
        raise CliError(EXIT_DATA, str(exc)) from None


def _load_embeddings_checked(path_str: str):
    try:
        return load_embeddings(path_str)
    except CorpusError as exc:
        raise CliError(EXIT_DATA, str(exc)) from None


def _load_checkpoint_checked(path_str: str):
    try:
        return load_checkpoint(path_str)
    except FileNotFoundError:
        raise CliError(EXIT_DATA,
                       f"checkpoint file not found: {path_str}") from None
    except (CheckpointError, ConfigError) as exc:
        raise CliError(EXIT_DATA, f"checkpoint {path_str}: {exc}") from None


def _embeddings_for(config: ModelConfig, path_str, *, source: str,
                    mismatch_exit: int = EXIT_DATA):
    """Load the table a text-reading model needs; None for audio-only.

    A width mismatch is a config mistake when training (the d_text_in key)
    but a data mistake when scoring a checkpoint whose width is fixed.
    """
    if not config.uses_text:
        return None
    if not path_str:
        raise CliError(EXIT_CONFIG,
                       f"{source} is required: the model variant reads text")
    table = _load_embeddings_checked(path_str)
    if table.dimension != config.d_text_in:
        raise CliError(mismatch_exit,
                       f"embedding table carries {table.dimension}-dimensional "
                       f"vectors but the model expects d_text_in="
                       f"{config.d_text_in}")
    return table


def cmd_train(args) -> int:
    settings = resolve_settings(args.config, {
        "task_mode": args.task,
        "variant": args.variant,
        "seed": args.seed,
        "out_dir": args.out,
    })
    if not settings["corpus"]:
        raise CliError(EXIT_CONFIG, "config key 'corpus' is required to train")
    config = _model_config(settings)
    dialogs = _load_corpus_checked(settings["corpus"])
    table = _embeddings_for(config, settings["embeddings"],
                            source="config key 'embeddings'",
                            mismatch_exit=EXIT_CONFIG)
    try:
        train_dialogs, val_dialogs = split_train_val(
            dialogs, settings["val_fraction"], settings["seed"])
    except CorpusError as exc:
        # subclasses ValueError, so it must be caught first
        raise CliError(EXIT_DATA, str(exc)) from None
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None
    try:
        train_config = TrainConfig(
            lr=settings["lr"], batch_size=settings["batch_size"],
            max_epochs=settings["max_epochs"], patience=settings["patience"],
            seed=settings["seed"], grad_clip=settings["grad_clip"])
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None
    try:
        best, history = train(config, train_dialogs, val_dialogs,
                              train_config, table)
        matrices, metrics = evaluate_split(config, best, val_dialogs, table,
                                           threshold=settings["threshold"])
    except ModalityError as exc:
        raise CliError(EXIT_DATA, str(exc)) from None
    except NumericError as exc:
        raise CliError(EXIT_NUMERIC, str(exc)) from None

    out_dir = Path(settings["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    checkpoint_path = out_dir / "model.ckpt"
    save_checkpoint(best, checkpoint_path, config)
    history_path = out_dir / "history.csv"
    history.to_csv(history_path)
    report_path = out_dir / "report.txt"
    render_report(history.rows(), matrices, metrics, config, report_path)

    print(f"trained {variant_label(config)} for {len(history)} epochs "
          f"({len(train_dialogs)} train / {len(val_dialogs)} val dialogs)")
    for task in config.tasks:
        m = metrics[task]
        print(f"  val {task}: precision={m.precision:.4f} "
              f"recall={m.recall:.4f} f1={m.f1:.4f} "
              f"accuracy={m.accuracy:.4f}")
    for artifact in (checkpoint_path, history_path, report_path,
                     report_path.with_suffix(".json")):
        print(f"  wrote {artifact}")
    return EXIT_OK


def _evaluation_document(config, matrices, metrics, n_dialogs):
    return {
        "variant": variant_label(config),
        "threshold": EVAL_THRESHOLD,
        "dialogs": n_dialogs,
        "tasks": {task: {"confusion": matrices[task].as_dict(),
                         "metrics": metrics[task].as_dict()}
                  for task in config.tasks},
    }


def cmd_eval(args) -> int:
    params, config = _load_checkpoint_checked(args.checkpoint)
    dialogs = _load_corpus_checked(args.data)
    table = _embeddings_for(config, args.embeddings, source="--embeddings")
    try:
        matrices, metrics = evaluate_split(config, params, dialogs, table,
                                           threshold=EVAL_THRESHOLD)
    except ModalityError as exc:
        raise CliError(EXIT_DATA, str(exc)) from None
    except NumericError as exc:
        raise CliError(EXIT_NUMERIC, str(exc)) from None

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = out_dir / "metrics.json"
    document = _evaluation_document(config, matrices, metrics, len(dialogs))
    metrics_path.write_text(json.dumps(document, indent=2) + "\n",
                            encoding="utf-8")
    report_path = out_dir / "report.txt"
    render_report([], matrices, metrics, config, report_path)

    print(f"evaluated {variant_label(config)} on {len(dialogs)} dialogs")
    for task in config.tasks:
        m = metrics[task]
        print(f"  {task}: precision={m.precision:.4f} recall={m.recall:.4f} "
              f"f1={m.f1:.4f} accuracy={m.accuracy:.4f}")
    for artifact in (metrics_path, report_path,
                     report_path.with_suffix(".json")):
        print(f"  wrote {artifact}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    params, config = _load_checkpoint_checked(args.checkpoint)
    dialogs = _load_corpus_checked(args.data)
    table = _embeddings_for(config, args.embeddings, source="--embeddings")
    by_id = {d.dialog_id: d for d in dialogs}
    if args.dialog_id not in by_id:
        known = ", ".join(sorted(by_id)[:8])
        raise CliError(EXIT_DATA,
                       f"unknown dialog id {args.dialog_id!r}; corpus has "
                       f"{len(by_id)} dialogs (first ids: {known})")
    dialog = by_id[args.dialog_id]
    try:
        prediction = forward_dialog(config, params, dialog, table,
                                    training=False)
    except ModalityError as exc:
        raise CliError(EXIT_DATA, str(exc)) from None
    except NumericError as exc:
        raise CliError(EXIT_NUMERIC, str(exc)) from None

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for k, utt in enumerate(dialog.utterances):
        labels = {}
        for task in config.tasks:
            probability = float(prediction.probabilities[task][k].data[0])
            labels[task] = {"actual": getattr(utt, task),
                            "predicted": int(probability >= EVAL_THRESHOLD),
                            "probability": probability}
        rows.append({"uid": utt.uid, "speaker": utt.speaker,
                     "text": " ".join(utt.tokens), "labels": labels})
    utterances_path = out_dir / "utterances.json"
    utterances_path.write_text(
        json.dumps({"dialog_id": dialog.dialog_id,
                    "variant": variant_label(config),
                    "utterances": rows}, indent=2) + "\n",
        encoding="utf-8")

    print(f"dialog {dialog.dialog_id}: {len(rows)} utterances, "
          f"{variant_label(config)}")
    for row in rows:
        cells = [f"{task} gold={row['labels'][task]['actual']} "
                 f"pred={row['labels'][task]['predicted']}"
                 for task in config.tasks]
        print(f"  {row['uid']} [{row['speaker']}] {' | '.join(cells)}"
              + (f"  {row['text']}" if row["text"] else ""))
    print(f"  wrote {utterances_path}")

    if prediction.dialog_trace is not None:
        heatmap_path = out_dir / "heatmap.json"
        export_heatmap(prediction.dialog_trace, dialog.dialog_id, heatmap_path)
        print(f"  wrote {heatmap_path}")
    else:
        print("  no attention heatmap: context attention is disabled "
              "in this variant")
    return EXIT_OK


def cmd_verify(args) -> int:
    results = run_checks()
    for result in results:
        if result.passed:
            print(f"ok    {result.name}")
        else:
            detail = result.detail.replace("\n", "\n      ")
            print(f"FAIL  {result.name}: {detail}")
    failed = [r for r in results if not r.passed]
    if failed:
        names = ", ".join(r.name for r in failed)
        print(f"{len(results)} checks, {len(failed)} failed: {names}")
        return EXIT_VERIFY
    print(f"{len(results)} checks, all passed")
    return EXIT_OK


def _config_key_help() -> str:
    lines = ["config file keys (key = value, one per line, # comments):"]
    for key, (converter, default, text) in CONFIG_KEYS.items():
        lines.append(f"  {key:<18} {text} (default: {default})")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="banter",
        description="Conversational sarcasm and humor classifier.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser(
        "train", help="fit a variant and write its artifacts",
        epilog=_config_key_help(),
        formatter_class=argparse.RawDescriptionHelpFormatter)
    p_train.add_argument("--config", help="run configuration file")
    p_train.add_argument("--task", choices=TASK_MODES,
                         help="override task_mode")
    p_train.add_argument("--variant", help="override the model variant row")
    p_train.add_argument("--seed", type=int, help="override the seed")
    p_train.add_argument("--out", help="override out_dir")
    p_train.set_defaults(handler=cmd_train)

    p_eval = sub.add_parser("eval",
                            help="score a checkpoint against a corpus")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--data", required=True, help="corpus to score")
    p_eval.add_argument("--embeddings",
                        help="embedding table (text variants only)")
    p_eval.add_argument("--out", required=True, help="output directory")
    p_eval.set_defaults(handler=cmd_eval)

    p_inspect = sub.add_parser(
        "inspect", help="per-utterance predictions and attention heatmap")
    p_inspect.add_argument("--checkpoint", required=True)
    p_inspect.add_argument("--data", required=True)
    p_inspect.add_argument("--embeddings",
                           help="embedding table (text variants only)")
    p_inspect.add_argument("--dialog-id", required=True)
    p_inspect.add_argument("--out", required=True)
    p_inspect.set_defaults(handler=cmd_inspect)

    p_verify = sub.add_parser(
        "verify", help="run the built-in gradient and property checks")
    p_verify.set_defaults(handler=cmd_verify)
    return parser


def main(argv=None) -> int:
    threads = os.environ.get("MSHC_THREADS")
    if threads is not None and (not threads.strip().isdigit()
                                or int(threads) < 1):
        print(f"error: MSHC_THREADS must be a positive integer, "
              f"got {threads!r}", file=sys.stderr)
        return EXIT_CONFIG
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except CliError as exc:
        print(f"error: {exc.message}", file=sys.stderr)
        return exc.code


def console_main() -> None:
    sys.exit(main())
