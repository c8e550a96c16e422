"""Command-line pipeline: simulate -> train (three phases) -> enhance ->
evaluate -> bench.

Every command loads the same config file (all keys optional), validates it
before doing any work, and maps failures onto stable exit codes:
0 success, 1 usage or config error, 2 data/shape error, 3 numeric failure.
Log verbosity comes from the SJEN_LOG environment variable
(debug | info | warning | error; default info).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import checkpoint, trainer
from .audio import read_wav, write_wav
from .config import RunConfig, load_config, parse_config
from .datasim import synth_corpus
from .errors import ConfigError, DataError, NumericError
from .metrics import (
    count_flops,
    count_params,
    evaluate,
    measure_rtf,
    model_enhancer,
    render_csv,
    render_table,
)
from .model import (
    N_STAGES,
    PRESETS,
    ModelConfig,
    build_student,
    build_teacher,
    enhance_waveform,
)

log = logging.getLogger("sjen")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; the contract reserves 2 for data
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _setup_logging():
    name = os.environ.get("SJEN_LOG", "info").strip().lower()
    levels = {"debug": logging.DEBUG, "info": logging.INFO,
              "warning": logging.WARNING, "error": logging.ERROR}
    if name not in levels:
        raise ConfigError(
            f"SJEN_LOG must be one of {', '.join(levels)}, got {name!r}"
        )
    logging.basicConfig(
        level=levels[name],
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def _run_config(path: str | None) -> RunConfig:
    return load_config(path) if path else parse_config({})


def _infer_model_config(arrays: dict, n_freq: int) -> ModelConfig:
    """Recover encoder widths from a checkpoint's stored weight shapes."""
    widths = []
    for i in range(N_STAGES):
        name = f"mag_net.encoder_l.{i}.conv.weight"
        if name not in arrays:
            raise DataError(f"checkpoint is missing {name}; cannot infer the architecture")
        widths.append(int(arrays[name].shape[0]))
    return ModelConfig(channels=tuple(widths), n_freq=n_freq)


def _load_model(ckpt_path, n_freq: int, allow=("student", "bad_student", "teacher")):
    identity, arrays = checkpoint.load(ckpt_path)
    if identity not in allow:
        raise DataError(
            f"checkpoint {ckpt_path} holds a {identity!r} model; expected one of {allow}"
        )
    model_cfg = _infer_model_config(arrays, n_freq)
    builder = build_teacher if identity == "teacher" else build_student
    model = builder(model_cfg, seed=0)
    checkpoint.load_into(ckpt_path, model, expect_identity=identity)
    return identity, model, model_cfg


# -- subcommands ----------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = _run_config(args.config)
    corpus = cfg.corpus_config(
        out_dir=args.out, seed=args.seed, n_train=args.n_train, n_test=args.n_test
    )
    out = Path(corpus.out_dir)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise ConfigError(
            f"output directory {out} is not empty; pass --force to overwrite"
        )
    manifests = synth_corpus(corpus)
    for split, path in manifests.items():
        n_rows = sum(1 for line in open(path) if line.strip())
        print(f"{split}: {n_rows} records -> {path}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _run_config(args.config)
    phase = args.phase.replace("-", "_")
    train_cfg = cfg.train_config(phase)
    manifest = args.manifest or str(Path(cfg.paths.corpus_dir) / "train.jsonl")
    ckpt_dir = Path(cfg.paths.checkpoint_dir)
    ckpt_out = Path(args.ckpt_out) if args.ckpt_out else ckpt_dir / f"{phase}.ckpt"
    log_out = ckpt_out.with_suffix(".csv")
    ckpt_out.parent.mkdir(parents=True, exist_ok=True)

    if phase == "student":
        if not args.teacher or not args.bad_student:
            raise ConfigError(
                "student phase needs both frozen references: --teacher and --bad-student"
            )
        result = trainer.train_student(
            manifest, cfg.stft, cfg.model, train_cfg,
            teacher_ckpt=args.teacher, bad_student_ckpt=args.bad_student,
            ckpt_out=ckpt_out, log_out=log_out,
        )
    elif phase == "teacher":
        result = trainer.train_teacher(
            manifest, cfg.stft, cfg.model, train_cfg, ckpt_out=ckpt_out, log_out=log_out
        )
    else:
        result = trainer.train_bad_student(
            manifest, cfg.stft, cfg.model, train_cfg, ckpt_out=ckpt_out, log_out=log_out
        )
    print(
        f"{result.identity}: objective {result.initial_loss:.6g} -> {result.final_loss:.6g} "
        f"over {result.n_steps} steps"
    )
    print(f"checkpoint: {result.ckpt_path}")
    print(f"log: {result.log_path}")
    return EXIT_OK


def cmd_enhance(args) -> int:
    cfg = _run_config(args.config)
    identity, model, _ = _load_model(
        args.ckpt, cfg.stft.n_freq, allow=("student", "bad_student")
    )
    channels = read_wav(args.in_wav)
    if len(channels) != 1:
        raise DataError(
            f"enhancement expects a mono input, got {len(channels)} channels in {args.in_wav}"
        )
    wave = channels[0]
    if wave.sample_rate != cfg.stft.sample_rate:
        raise DataError(
            f"input sample rate {wave.sample_rate} does not match the configured "
            f"{cfg.stft.sample_rate}"
        )
    enhanced = enhance_waveform(model, wave, cfg.stft)
    write_wav(args.out_wav, enhanced, codec="float32")
    log.info("enhanced %s with the %s model -> %s", args.in_wav, identity, args.out_wav)
    print(args.out_wav)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _run_config(args.config)
    identity, model, _ = _load_model(
        args.ckpt, cfg.stft.n_freq, allow=("student", "bad_student")
    )
    conditions = cfg.datasim.get("test_snr_db", (-5.0, 0.0, 5.0, 10.0))
    report = evaluate(
        args.manifest, model_enhancer(model, cfg.stft), cfg.stft,
        snr_conditions=conditions, model=model,
    )
    rendered = render_csv(report) if args.format == "csv" else render_table(report)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(rendered)
        log.info("report for the %s model -> %s", identity, out)
    print(rendered, end="")
    return EXIT_OK


def _bench_one(label: str, model, model_cfg: ModelConfig, cfg: RunConfig,
               seconds: float, repeats: int) -> str:
    import numpy as np

    from .audio import Waveform

    params = count_params(model)
    flops = count_flops(model, cfg.stft.frames_for_duration(1.0))
    rng = np.random.default_rng(0)
    n = int(round(seconds * cfg.stft.sample_rate))
    wave = Waveform(rng.standard_normal(n) * 0.05, cfg.stft.sample_rate)
    rtf = measure_rtf(lambda w: enhance_waveform(model, w, cfg.stft), wave, repeats=repeats)
    return (
        f"{label:>12}  params {params / 1e6:7.3f} M  "
        f"flops {flops / 1e9:7.3f} G/s  rtf {rtf:6.3f}"
    )


def cmd_bench(args) -> int:
    cfg = _run_config(args.config)
    lines = ["# FLOPs counted as multiply-accumulates per second of audio"]
    if args.all_presets:
        targets = sorted(PRESETS)
    elif args.preset:
        targets = [args.preset]
    elif args.ckpt:
        targets = []
    else:
        raise ConfigError("bench needs a checkpoint, --preset, or --all-presets")

    for name in targets:
        if name not in PRESETS:
            raise ConfigError(
                f"unknown preset {name!r} (available: {', '.join(sorted(PRESETS))})"
            )
        model_cfg = ModelConfig.from_preset(name, n_freq=cfg.stft.n_freq)
        model = build_student(model_cfg, seed=0)
        lines.append(_bench_one(name, model, model_cfg, cfg, args.seconds, args.repeats))
    if args.ckpt:
        identity, model, model_cfg = _load_model(
            args.ckpt, cfg.stft.n_freq, allow=("student", "bad_student")
        )
        lines.append(
            _bench_one(identity, model, model_cfg, cfg, args.seconds, args.repeats)
        )
    print("\n".join(lines))
    return EXIT_OK


# -- wiring ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sjen", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="synthesize a seeded train/test corpus")
    p.add_argument("--config", help="config file (YAML)")
    p.add_argument("--out", help="corpus directory (default: paths.corpus_dir)")
    p.add_argument("--seed", type=int, help="override datasim.seed")
    p.add_argument("--n-train", type=int, help="override datasim.n_train")
    p.add_argument("--n-test", type=int, help="override datasim.n_test")
    p.add_argument("--force", action="store_true", help="allow a non-empty output directory")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("train", help="run one training phase")
    p.add_argument("phase", choices=("teacher", "bad_student", "bad-student", "student"))
    p.add_argument("--config", help="config file (YAML)")
    p.add_argument("--manifest", help="training manifest (default: <corpus_dir>/train.jsonl)")
    p.add_argument("--ckpt-out", help="checkpoint path (default: <checkpoint_dir>/<phase>.ckpt)")
    p.add_argument("--teacher", help="frozen teacher checkpoint (student phase)")
    p.add_argument("--bad-student", help="frozen bad-student checkpoint (student phase)")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("enhance", help="enhance one WAV file")
    p.add_argument("ckpt", help="student or bad-student checkpoint")
    p.add_argument("in_wav")
    p.add_argument("out_wav")
    p.add_argument("--config", help="config file (YAML)")
    p.set_defaults(fn=cmd_enhance)

    p = sub.add_parser("evaluate", help="score a manifest with a trained model")
    p.add_argument("ckpt", help="student or bad-student checkpoint")
    p.add_argument("manifest", help="JSONL manifest of the split to score")
    p.add_argument("--config", help="config file (YAML)")
    p.add_argument("--format", choices=("table", "csv"), default="table")
    p.add_argument("--out", help="also write the report to this path")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("bench", help="params / FLOPs / RTF for models or presets")
    p.add_argument("ckpt", nargs="?", help="checkpoint to bench")
    p.add_argument("--config", help="config file (YAML)")
    p.add_argument("--preset", help="bench a fresh model of this preset")
    p.add_argument("--all-presets", action="store_true")
    p.add_argument("--seconds", type=float, default=4.0, help="audio length for RTF timing")
    p.add_argument("--repeats", type=int, default=3, help="RTF timing repeats (median)")
    p.set_defaults(fn=cmd_bench)
    return parser


def main(argv=None) -> int:
    try:
        _setup_logging()
        args = build_parser().parse_args(argv)
        return args.fn(args)
    except SystemExit as exc:
        # argparse help/usage paths; keep main() returnable for in-process use
        return 0 if exc.code is None else int(exc.code)
    except ConfigError as exc:
        print(f"sjen: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"sjen: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DataError as exc:
        # ShapeError and WavFormatError are subclasses
        print(f"sjen: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
