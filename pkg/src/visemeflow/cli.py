"""Command-line entry point.

Subcommands: synth-data, extract-features, pretrain, train, calibrate,
infer, stream, eval, gradcheck, bench.  Every run prints its resolved
configuration; all randomness flows from --seed.  Config precedence is
built-in defaults < --config JSON file < explicit flags.  Exit codes:
0 success, 1 runtime failure (with a single machine-parsable
"ERROR <category>: ..." line on stderr), 2 usage errors.
"""

import argparse
import json
import os
import sys

import numpy as np

from .errors import ConfigError, VisemeflowError

_SUBCOMMANDS = {}


def _register(name):
    def wrap(fn):
        _SUBCOMMANDS[name] = fn
        return fn

    return wrap


def _print_config(args, skip=("func", "config")):
    # stderr so that stdout-piping subcommands (stream) stay clean
    for key in sorted(vars(args)):
        if key not in skip:
            print(f"config {key}={getattr(args, key)}", file=sys.stderr)


def _add_train_flags(p):
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--momentum", type=float, default=None)
    p.add_argument("--subsequence-len", type=int, default=None)
    p.add_argument("--holdout-fraction", type=float, default=None)
    p.add_argument("--log-every", type=int, default=None)
    p.add_argument("--checkpoint-every", type=int, default=None)
    for flag in ("w-c", "w-q", "w-q-prime", "w-a", "w-v", "w-j", "w-v-prime", "w-j-prime"):
        p.add_argument(f"--{flag}", type=float, default=None, help="loss term weight")


def _train_config(args, pretrain_iters=None, joint_iters=None):
    import dataclasses

    from .losses import JointWeights, PretrainWeights
    from .trainer import TrainConfig

    cfg = TrainConfig(seed=args.seed)
    for field, attr in (
        ("batch_size", "batch_size"),
        ("learning_rate", "learning_rate"),
        ("momentum", "momentum"),
        ("subsequence_len", "subsequence_len"),
        ("holdout_fraction", "holdout_fraction"),
        ("log_every", "log_every"),
        ("checkpoint_every", "checkpoint_every"),
    ):
        value = getattr(args, attr, None)
        if value is not None:
            setattr(cfg, field, value)
    w1 = {f.name: getattr(cfg.pretrain_weights, f.name)
          for f in dataclasses.fields(PretrainWeights)}
    w2 = {f.name: getattr(cfg.joint_weights, f.name)
          for f in dataclasses.fields(JointWeights)}
    for name in list(w1):
        value = getattr(args, name, None)
        if value is not None:
            w1[name] = value
    for name in list(w2):
        value = getattr(args, name, None)
        if value is not None:
            w2[name] = value
    cfg.pretrain_weights = PretrainWeights(**w1)
    cfg.joint_weights = JointWeights(**w2)
    if pretrain_iters is not None:
        cfg.pretrain_iters = pretrain_iters
    if joint_iters is not None:
        cfg.joint_iters = joint_iters
    cfg.validate()
    return cfg


@_register("synth-data")
def _cmd_synth_data(args) -> int:
    from .dataset import save_dataset
    from .synth import generate_corpus

    records = generate_corpus(
        args.speakers, args.clips_per_speaker, args.seed,
        min_frames=args.min_frames, max_frames=args.max_frames,
    )
    save_dataset(records, args.out_dir)
    print(f"wrote {len(records)} clips to {args.out_dir}")
    return 0


@_register("extract-features")
def _cmd_extract_features(args) -> int:
    from .audio_features import extract_features, write_feature_csv, write_feature_dump
    from .wav_io import read_wav

    feats = extract_features(read_wav(args.audio))
    write_feature_dump(args.out, feats)
    print(f"wrote {feats.shape[0]} frames x {feats.shape[1]} dims to {args.out}")
    if args.csv:
        write_feature_csv(args.csv, feats)
        print(f"wrote CSV mirror to {args.csv}")
    return 0


@_register("pretrain")
def _cmd_pretrain(args) -> int:
    from .dataset import load_dataset
    from .model import ArchConfig
    from .trainer import pretrain

    cfg = _train_config(args, pretrain_iters=args.iters)
    records = load_dataset(args.data)
    arch = ArchConfig.for_condition(args.condition)
    if not arch.has_shared:
        raise ConfigError("pre-training needs the phoneme and/or landmark stage")
    pretrain(records, cfg, arch, run_dir=args.out_dir)
    print(f"pretrained checkpoint at {os.path.join(args.out_dir, 'pretrained.vnck')}")
    return 0


@_register("train")
def _cmd_train(args) -> int:
    from .checkpoint import load_checkpoint, save_checkpoint
    from .dataset import load_dataset
    from .model import ArchConfig
    from .trainer import calibrate_thresholds, holdout_split, joint_train

    cfg = _train_config(args, joint_iters=args.iters)
    records = load_dataset(args.data)
    init = load_checkpoint(args.init) if args.init else None
    arch = init.arch if init is not None else ArchConfig.for_condition(args.condition)
    train_records, holdout = holdout_split(records, cfg.holdout_fraction, cfg.seed)
    params = joint_train(train_records, cfg, init=init, arch=arch, run_dir=args.out_dir)
    if not args.no_calibrate:
        params.thresholds = calibrate_thresholds(params, holdout)
    out_path = os.path.join(args.out_dir, "model.vnck")
    save_checkpoint(out_path, params)
    print(f"trained model at {out_path}")
    return 0


@_register("calibrate")
def _cmd_calibrate(args) -> int:
    from .checkpoint import load_checkpoint, save_checkpoint
    from .dataset import load_dataset
    from .trainer import calibrate_thresholds

    params = load_checkpoint(args.model)
    holdout = load_dataset(args.data)
    params.thresholds = calibrate_thresholds(params, holdout)
    save_checkpoint(args.out, params)
    print(f"calibrated thresholds written to {args.out}")
    return 0


@_register("infer")
def _cmd_infer(args) -> int:
    from .checkpoint import load_checkpoint
    from .inference import export_curves, infer_clip, median_filter_tracks
    from .wav_io import read_wav

    params = load_checkpoint(args.model)
    clip = read_wav(args.audio)
    tracks, _, _ = infer_clip(clip, params)
    if args.median_filter:
        tracks = median_filter_tracks(tracks, args.median_filter)
    export_curves(tracks, args.out, args.format)
    print(f"wrote {len(tracks)} tracks ({tracks[0].values.shape[0]} frames) to {args.out}")
    return 0


@_register("stream")
def _cmd_stream(args) -> int:
    from .checkpoint import load_checkpoint
    from .inference import CSV_HEADER, StreamState

    params = load_checkpoint(args.model)
    stream = StreamState(params)
    out = sys.stdout
    out.write(",".join(CSV_HEADER) + "\n")

    def emit(frames):
        for fr in frames:
            row = [str(fr.frame), repr(fr.frame / 100.0)]
            row += [repr(float(v)) for v in fr.values]
            row += [repr(float(v)) for v in fr.jali]
            row += [str(int(b)) for b in fr.active]
            out.write(",".join(row) + "\n")
        if frames:
            out.flush()

    stdin = sys.stdin.buffer
    chunk_bytes = 2 * args.chunk_size
    while True:
        data = stdin.read(chunk_bytes)
        if not data:
            break
        if len(data) % 2:
            data = data[:-1]
        emit(stream.push(np.frombuffer(data, dtype="<i2")))
    emit(stream.flush())
    print(f"streamed {stream.frames_emitted} frames", file=sys.stderr)
    return 0


@_register("eval")
def _cmd_eval(args) -> int:
    from .dataset import load_dataset
    from .evaluation import (
        leave_one_speaker_out,
        report_table,
        report_to_csv,
        report_to_json,
        run_condition,
        split_corpus,
    )

    cfg = _train_config(args)
    cfg.pretrain_iters = args.pretrain_iters
    cfg.joint_iters = args.joint_iters
    records = load_dataset(args.data)
    if args.loso:
        report, _ = leave_one_speaker_out(
            records, cfg, condition=args.condition,
            joint_per_speaker=args.joint_per_speaker,
        )
    else:
        speakers = sorted({r.speaker_id for r in records})
        test_speaker = args.test_speaker or speakers[-1]
        datasets = split_corpus(records, {test_speaker}, args.joint_per_speaker)
        report = run_condition(args.condition, datasets, cfg, run_dir=args.out_dir)
    print(report_table(report))
    if args.out:
        if args.format == "json":
            report_to_json(report, args.out)
        else:
            report_to_csv(report, args.out)
        print(f"report written to {args.out}")
    return 0


@_register("gradcheck")
def _cmd_gradcheck(args) -> int:
    from .gradcheck import run_gradcheck

    report = run_gradcheck(args.seed)
    for name, err in report.errors.items():
        print(f"{name:24s} {err:.3e}")
    print(f"max relative gradient error: {report.max_error:.3e}")
    if report.passed(args.tolerance):
        print(f"PASS (< {args.tolerance:g})")
        return 0
    print(f"FAIL (>= {args.tolerance:g})")
    return 1


@_register("bench")
def _cmd_bench(args) -> int:
    from .bench import (
        compare_backends,
        format_backend_table,
        kernel_benchmark,
        realtime_benchmark,
    )

    if args.mode == "realtime":
        stats = realtime_benchmark(seconds=args.seconds, seed=args.seed)
        for key, value in stats.items():
            print(f"{key}={value}")
        budget = 10.0
        print(
            f"{'PASS' if stats['ms_per_frame_mean'] <= budget else 'FAIL'}: "
            f"{stats['ms_per_frame_mean']:.2f} ms/frame vs {budget:.0f} ms budget"
        )
    elif args.mode == "kernels":
        stats = kernel_benchmark(seed=args.seed)
        for key, value in stats.items():
            print(f"{key}={value}")
    else:
        print(format_backend_table(compare_backends(seconds=args.seconds, seed=args.seed)))
    return 0


def build_parser(config_defaults=None) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="visemeflow",
        description="Audio-driven viseme motion curves: data synthesis, training, "
        "inference, evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, **kwargs):
        p = sub.add_parser(name, **kwargs)
        p.add_argument("--config", default=None, help="JSON file with flag defaults")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=0,
                       help="cap numba parallelism (0: leave unchanged)")
        p.add_argument("--deterministic", action="store_true",
                       help="single-ordered reduction (always on; flag kept explicit)")
        p.set_defaults(func=_SUBCOMMANDS[name])
        return p

    p = add("synth-data", help="generate a synthetic corpus")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--speakers", type=int, default=3)
    p.add_argument("--clips-per-speaker", type=int, default=4)
    p.add_argument("--min-frames", type=int, default=250)
    p.add_argument("--max-frames", type=int, default=380)

    p = add("extract-features", help="dump per-frame audio features")
    p.add_argument("--audio", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--csv", default=None)

    p = add("pretrain", help="phase 1: shared stack + decoders")
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--iters", type=int, default=20000)
    p.add_argument("--condition", default="full",
                   choices=["full", "phoneme-based", "landmark-based"])
    _add_train_flags(p)

    p = add("train", help="phase 2: joint training of the whole network")
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--init", default=None, help="pretrained checkpoint (.vnck)")
    p.add_argument("--iters", type=int, default=5000)
    p.add_argument("--condition", default="full",
                   choices=["full", "phoneme-based", "landmark-based", "audio-based"])
    p.add_argument("--no-calibrate", action="store_true")
    _add_train_flags(p)

    p = add("calibrate", help="fit activation thresholds on a hold-out set")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    p = add("infer", help="audio file to 31-track curve file")
    p.add_argument("--model", required=True)
    p.add_argument("--audio", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--format", default="csv", choices=["csv", "keyframe-json"])
    p.add_argument("--median-filter", type=int, default=0,
                   help="odd window width; 0 disables (default)")

    p = add("stream", help="stdin 16-bit PCM to stdout CSV rows")
    p.add_argument("--model", required=True)
    p.add_argument("--chunk-size", type=int, default=1600,
                   help="samples per stdin read")

    p = add("eval", help="train a condition and report metrics")
    p.add_argument("--data", required=True)
    p.add_argument("--condition", default="full", choices=list(
        ("full", "landmark-based", "phoneme-based", "audio-based", "no-transfer")
    ))
    p.add_argument("--loso", action="store_true", help="leave-one-speaker-out")
    p.add_argument("--test-speaker", default=None)
    p.add_argument("--joint-per-speaker", type=int, default=None)
    p.add_argument("--pretrain-iters", type=int, default=2000)
    p.add_argument("--joint-iters", type=int, default=1000)
    p.add_argument("--out", default=None)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--format", default="json", choices=["json", "csv"])
    _add_train_flags(p)

    p = add("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--tolerance", type=float, default=1e-4)

    p = add("bench", help="performance measurements")
    p.add_argument("--mode", default="realtime", choices=["realtime", "kernels", "backends"])
    p.add_argument("--seconds", type=float, default=60.0)

    if config_defaults:
        for action in sub.choices.values():
            known = {a.dest for a in action._actions}
            unknown = set(config_defaults) - known
            action.set_defaults(**{k: v for k, v in config_defaults.items() if k in known})
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    # first pass only to find --config; second pass applies its defaults
    config_defaults = None
    if "--config" in argv:
        path = argv[argv.index("--config") + 1] if argv.index("--config") + 1 < len(argv) else None
        if path:
            try:
                with open(path) as fh:
                    config_defaults = {
                        k.replace("-", "_"): v for k, v in json.load(fh).items()
                    }
            except (OSError, json.JSONDecodeError) as exc:
                print(f"ERROR config: unreadable config file {path}: {exc}", file=sys.stderr)
                return 1
    parser = build_parser(config_defaults)
    args = parser.parse_args(argv)
    if args.threads and args.threads > 0:
        try:
            import numba

            numba.set_num_threads(args.threads)
        except ImportError:
            pass
    _print_config(args)
    try:
        return args.func(args)
    except VisemeflowError as exc:
        print(f"ERROR {exc.category}: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - single-line category contract
        print(f"ERROR runtime: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
