"""Command-line interface.

Subcommands: generate, train, eval, ablate, gradcheck, inspect-bank,
dump-features, rerun. Every command that produces files also writes a
manifest.json recording the resolved configuration, which `cspm rerun`
can replay.

Exit codes: 0 success, 2 usage error, 3 configuration or file-format error,
4 numeric failure (non-finite gradients, failed gradient check).

Only the standard library is imported at module level; numpy and the
package internals load lazily so CSPM_THREADS can pin the BLAS thread
count (OPENBLAS/OMP/MKL_NUM_THREADS) before numpy first loads.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from datetime import datetime, timezone

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_NUMERIC = 4

_OUTPUT_FLAGS = ("-o", "--output", "--out-dir")


def _setup_threads() -> None:
    n = os.environ.get("CSPM_THREADS")
    if n:
        for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, n)


# ---------------------------------------------------------------------------
# small parsers (run inside handlers so failures map to exit code 3)


def _parse_classes(text: str) -> tuple:
    from .signal_gen import MODULATION_NAMES
    if text.strip() == "all":
        return MODULATION_NAMES
    names = tuple(p.strip() for p in text.split(",") if p.strip())
    if not names:
        from .errors import ConfigError
        raise ConfigError("empty class list")
    return names


def _parse_snr(text: str) -> tuple:
    from .errors import ConfigError
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ConfigError(f"snr grid must be start:step:stop, got {text!r}")
        start, step, stop = (float(p) for p in parts)
        if step <= 0:
            raise ConfigError("snr step must be positive")
        values = []
        v = start
        while v <= stop + 1e-9:
            values.append(round(v, 9))
            v += step
    else:
        values = [float(p) for p in text.split(",") if p.strip()]
    if not values:
        raise ConfigError(f"empty snr grid: {text!r}")
    return tuple(values)


def _parse_ints(text: str) -> tuple:
    from .errors import ConfigError
    try:
        return tuple(int(p) for p in text.split(",") if p.strip())
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {text!r}")


def _parse_ratios(text: str) -> tuple:
    from .errors import ConfigError
    try:
        parts = tuple(float(p) for p in text.split(","))
    except ValueError:
        raise ConfigError(f"expected three comma-separated ratios, got {text!r}")
    if len(parts) != 3:
        raise ConfigError(f"expected three ratios train,val,test, got {len(parts)}")
    return parts


def _utc_now() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _write_manifest(path, command, argv, resolved, inputs, outputs, t0) -> None:
    from . import __version__
    doc = {
        "schema_version": 1,
        "tool": "cspm",
        "version": __version__,
        "command": command,
        "argv": list(argv),
        "resolved_config": resolved,
        "inputs": inputs,
        "outputs": outputs,
        "wall_clock_s": round(time.perf_counter() - t0, 3),
        "created_utc": _utc_now(),
    }
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# shared argument groups


def _add_model_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model")
    g.add_argument("--variant", default="full",
                   choices=("full", "phase_motion_only", "fixed_morlet",
                            "learnable_morlet"))
    g.add_argument("--subbands", type=int, default=8)
    g.add_argument("--kernel-len", type=int, default=33)
    g.add_argument("--lags", default="1,2,4,8",
                   help="comma-separated positive lags (default 1,2,4,8)")
    g.add_argument("--mix-channels", type=int, default=64)
    g.add_argument("--mix-kernel", type=int, default=3)
    g.add_argument("--hidden", type=int, default=128)
    g.add_argument("--attn-dim", type=int, default=64)
    g.add_argument("--mlp-hidden", type=int, default=128)
    g.add_argument("--dtype", default="f32", choices=("f32", "f64"))
    g.add_argument("--model-seed", type=int, default=0)


def _add_split_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("split")
    g.add_argument("--ratios", default="0.6,0.2,0.2",
                   help="train,val,test shares (default 0.6,0.2,0.2)")
    g.add_argument("--split-seed", type=int, default=42)


def _add_train_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("training")
    g.add_argument("--epochs", type=int, default=50)
    g.add_argument("--batch-size", type=int, default=512)
    g.add_argument("--lr", type=float, default=1e-3)
    g.add_argument("--seed", type=int, default=42, help="training seed (shuffles)")
    g.add_argument("--budget", type=int, default=300_000)
    g.add_argument("--stop-at-val-acc", type=float, default=None,
                   help="stop as soon as validation accuracy reaches this")


def _model_config(args, n_classes: int, seq_len: int):
    from .model import ModelConfig
    return ModelConfig(
        n_classes=n_classes, seq_len=seq_len, variant=args.variant,
        n_subbands=args.subbands, kernel_len=args.kernel_len,
        lags=_parse_ints(args.lags), mix_channels=args.mix_channels,
        mix_kernel=args.mix_kernel, hidden=args.hidden, attn_dim=args.attn_dim,
        mlp_hidden=args.mlp_hidden, dtype=args.dtype)


def _train_config(args):
    from .training import TrainConfig
    return TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                       learning_rate=args.lr, seed=args.seed, budget=args.budget,
                       stop_at_val_accuracy=args.stop_at_val_acc)


# ---------------------------------------------------------------------------
# command handlers


def _cmd_generate(args) -> int:
    from .signal_gen import GenerationSpec, synthesize_dataset, write_container
    t0 = time.perf_counter()
    spec = GenerationSpec(
        modulations=_parse_classes(args.classes),
        snr_grid_db=_parse_snr(args.snr),
        per_cell=args.per_cell, seq_len=args.length, seed=args.seed,
        sps=args.sps, pulse=args.pulse, random_phase=not args.no_random_phase,
        max_cfo=args.max_cfo, timing_jitter=args.timing_jitter)
    dataset = synthesize_dataset(spec)
    write_container(dataset, args.output)
    _write_manifest(args.output + ".manifest.json", "generate", args._argv,
                    dataclasses.asdict(spec), {}, {"container": args.output}, t0)
    print(f"wrote {len(dataset.examples)} examples "
          f"({len(dataset.class_names)} classes x {len(dataset.snr_grid)} SNRs x "
          f"{spec.per_cell} per cell) to {args.output}")
    return EXIT_OK


def _cmd_train(args) -> int:
    from .model import CSPMNet
    from .signal_gen import read_container, split_dataset
    from .training import count_trainable, train
    t0 = time.perf_counter()
    dataset = read_container(args.data)
    ratios = _parse_ratios(args.ratios)
    train_set, val_set, _ = split_dataset(dataset, ratios, args.split_seed)
    cfg = _model_config(args, len(dataset.class_names), dataset.seq_len)
    model = CSPMNet(cfg, seed=args.model_seed)
    tc = _train_config(args)
    print(f"training {cfg.variant} ({count_trainable(model)} trainable params) "
          f"on {len(train_set.examples)} examples")

    def show(epoch, hist):
        print(f"epoch {epoch:3d}: train_loss={hist.train_loss[-1]:.4f} "
              f"val_loss={hist.val_loss[-1]:.4f} "
              f"val_acc={hist.val_accuracy[-1]:.4f} ({hist.seconds[-1]:.1f}s)")

    result = train(model, train_set, val_set, tc, out_dir=args.out_dir, on_epoch=show)
    resolved = {
        "model": json.loads(cfg.to_json()),
        "training": dataclasses.asdict(tc),
        "split": {"ratios": list(ratios), "seed": args.split_seed},
        "model_seed": args.model_seed,
    }
    outputs = {"best": result.best_checkpoint, "last": result.last_checkpoint,
               "history": result.history_path}
    _write_manifest(os.path.join(args.out_dir, "manifest.json"), "train",
                    args._argv, resolved, {"data": args.data}, outputs, t0)
    print(f"best epoch {result.best_epoch} "
          f"(val_acc={result.best_val_accuracy:.4f}); wrote {args.out_dir}")
    return EXIT_OK


def _pick_split(dataset, name, ratios, seed):
    from .signal_gen import split_dataset
    if name == "all":
        return dataset
    parts = split_dataset(dataset, ratios, seed)
    return parts[("train", "val", "test").index(name)]


def _cmd_eval(args) -> int:
    from .evaluation import emit_report, evaluate
    from .model import load_checkpoint
    from .signal_gen import read_container
    t0 = time.perf_counter()
    model = load_checkpoint(args.checkpoint)
    dataset = read_container(args.data)
    ratios = _parse_ratios(args.ratios)
    subset = _pick_split(dataset, args.split, ratios, args.split_seed)
    report = evaluate(model, subset, batch_size=args.batch_size)
    paths = emit_report(report, args.out_dir)
    resolved = {
        "model": json.loads(model.config.to_json()),
        "split": {"name": args.split, "ratios": list(ratios),
                  "seed": args.split_seed},
        "batch_size": args.batch_size,
    }
    _write_manifest(os.path.join(args.out_dir, "manifest.json"), "eval",
                    args._argv, resolved,
                    {"checkpoint": args.checkpoint, "data": args.data}, paths, t0)

    def fmt(v):
        return "n/a" if v is None else f"{v:.4f}"

    print(f"overall={report.overall_accuracy:.4f} on {report.n_examples} examples "
          f"({args.split} split) | low={fmt(report.segment_low)} "
          f"mid={fmt(report.segment_mid)} high={fmt(report.segment_high)} | "
          f"params={report.params} flops={report.flops}")
    return EXIT_OK


def _cmd_ablate(args) -> int:
    from .evaluation import run_ablation, write_ablation_csv
    from .signal_gen import read_container
    t0 = time.perf_counter()
    dataset = read_container(args.data)
    ratios = _parse_ratios(args.ratios)
    variants = tuple(p.strip() for p in args.variants.split(",") if p.strip())
    base = _model_config(args, len(dataset.class_names), dataset.seq_len)
    tc = _train_config(args)
    rows = run_ablation(dataset, base, tc, variants=variants, ratios=ratios,
                        split_seed=args.split_seed, model_seed=args.model_seed)
    os.makedirs(args.out_dir, exist_ok=True)
    csv_path = os.path.join(args.out_dir, "ablation.csv")
    write_ablation_csv(rows, csv_path)
    resolved = {
        "model_base": json.loads(base.to_json()),
        "training": dataclasses.asdict(tc),
        "variants": list(variants),
        "split": {"ratios": list(ratios), "seed": args.split_seed},
        "model_seed": args.model_seed,
    }
    _write_manifest(os.path.join(args.out_dir, "manifest.json"), "ablate",
                    args._argv, resolved, {"data": args.data},
                    {"ablation": csv_path}, t0)
    for r in rows:
        print(f"{r.variant:20s} params={r.params:7d} "
              f"overall={r.overall_accuracy:.4f}")
    print(f"wrote {csv_path}")
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    from .training import default_gradcheck_config, grad_check
    t0 = time.perf_counter()
    cfg = default_gradcheck_config(args.variant)
    report = grad_check(config=cfg, precision=args.precision, step=args.step,
                        tolerance=args.tol, batch_size=args.batch_size,
                        seed=args.seed, inject_fault=args.inject_fault)
    for name in sorted(report.group_errors):
        print(f"{name:25s} {report.group_errors[name]:.3e}")
    verdict = "PASS" if report.passed else "FAIL"
    print(f"{verdict}: max relative error {report.max_error:.3e} "
          f"(tolerance {report.tolerance:.0e}, {report.precision}, "
          f"{report.seconds:.1f}s)")
    if args.out_dir:
        os.makedirs(args.out_dir, exist_ok=True)
        out = os.path.join(args.out_dir, "gradcheck.json")
        doc = dataclasses.asdict(report)
        tmp = out + ".tmp"
        with open(tmp, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, out)
        _write_manifest(os.path.join(args.out_dir, "manifest.json"), "gradcheck",
                        args._argv,
                        {"config": json.loads(cfg.to_json()),
                         "precision": args.precision, "step": args.step,
                         "tolerance": report.tolerance, "seed": args.seed,
                         "batch_size": args.batch_size,
                         "inject_fault": args.inject_fault},
                        {}, {"report": out}, t0)
    return EXIT_OK if report.passed else EXIT_NUMERIC


def _load_or_build_model(args, n_classes=11, seq_len=128):
    from .model import CSPMNet, load_checkpoint
    if args.checkpoint:
        return load_checkpoint(args.checkpoint)
    return CSPMNet(_model_config(args, n_classes, seq_len), seed=args.model_seed)


def _cmd_inspect_bank(args) -> int:
    from .errors import ConfigError
    from .frontend import bank_frequency_response
    t0 = time.perf_counter()
    model = _load_or_build_model(args)
    bank = model.filter_bank()
    if bank is None:
        raise ConfigError("phase_motion_only has no filter bank to inspect")
    os.makedirs(args.out_dir, exist_ok=True)
    taps_path = os.path.join(args.out_dir, "taps.csv")
    lines = ["subband,tap,real,imag"]
    for s in range(bank.n_filters):
        for k in range(bank.kernel_len):
            lines.append(f"{s},{k},{float(bank.w_real[s, k])!r},"
                         f"{float(bank.w_imag[s, k])!r}")
    with open(taps_path + ".tmp", "w") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(taps_path + ".tmp", taps_path)

    freqs, mags = bank_frequency_response(bank, args.n_fft)
    resp_path = os.path.join(args.out_dir, "response.csv")
    lines = ["subband,freq_cycles_per_sample,magnitude"]
    for s in range(bank.n_filters):
        for f, m in zip(freqs, mags[s]):
            lines.append(f"{s},{float(f)!r},{float(m)!r}")
    with open(resp_path + ".tmp", "w") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(resp_path + ".tmp", resp_path)

    _write_manifest(os.path.join(args.out_dir, "manifest.json"), "inspect-bank",
                    args._argv, {"model": json.loads(model.config.to_json()),
                                 "n_fft": args.n_fft},
                    {"checkpoint": args.checkpoint or ""},
                    {"taps": taps_path, "response": resp_path}, t0)
    print(f"wrote {taps_path} and {resp_path} "
          f"({bank.n_filters} filters, K={bank.kernel_len})")
    return EXIT_OK


def _cmd_dump_features(args) -> int:
    from .errors import ConfigError
    from .frontend import complex_conv_forward
    from .phase_motion import channel_layout, features_forward
    from .signal_gen import read_container
    t0 = time.perf_counter()
    dataset = read_container(args.data)
    if not 0 <= args.index < len(dataset.examples):
        raise ConfigError(
            f"index {args.index} out of range (dataset has {len(dataset.examples)})")
    model = _load_or_build_model(args, len(dataset.class_names), dataset.seq_len)
    x, y, snr = dataset.to_arrays()
    example = x[args.index].astype(model.config.np_dtype)
    if model.config.variant == "phase_motion_only":
        z_r = example[0][None, None, :]
        z_i = example[1][None, None, :]
    else:
        zr, zi = complex_conv_forward(example[0], example[1], model.filter_bank())
        z_r, z_i = zr[None], zi[None]
    fmap, _ = features_forward(z_r, z_i, model.config.lags)
    names = channel_layout(model.config.effective_subbands, model.config.lags)

    os.makedirs(args.out_dir, exist_ok=True)
    path = os.path.join(args.out_dir, "features.csv")
    lines = ["channel,name,t,value"]
    for c, name in enumerate(names):
        for t in range(fmap.shape[2]):
            lines.append(f"{c},{name},{t},{float(fmap[0, c, t])!r}")
    with open(path + ".tmp", "w") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(path + ".tmp", path)

    _write_manifest(os.path.join(args.out_dir, "manifest.json"), "dump-features",
                    args._argv, {"model": json.loads(model.config.to_json()),
                                 "index": args.index},
                    {"data": args.data, "checkpoint": args.checkpoint or ""},
                    {"features": path}, t0)
    print(f"wrote {path}: example {args.index} "
          f"(label={dataset.class_names[int(y[args.index])]}, "
          f"snr={float(snr[args.index]):g} dB), "
          f"{fmap.shape[1]} channels x {fmap.shape[2]} steps")
    return EXIT_OK


def _cmd_rerun(args) -> int:
    from .errors import FormatError
    try:
        with open(args.manifest) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{args.manifest}: not valid JSON ({exc})")
    for key in ("schema_version", "tool", "argv", "command"):
        if key not in doc:
            raise FormatError(f"{args.manifest}: missing {key!r}")
    if doc["tool"] != "cspm" or doc["schema_version"] != 1:
        raise FormatError(f"{args.manifest}: not a cspm schema-1 manifest")
    argv = [str(a) for a in doc["argv"]]
    if args.out_dir is not None:
        argv = _patch_output(argv, args.out_dir)
    print(f"replaying: cspm {' '.join(argv)}")
    return main(argv)


def _patch_output(argv, new_path):
    from .errors import ConfigError
    argv = list(argv)
    for i, tok in enumerate(argv):
        if tok in _OUTPUT_FLAGS:
            if i + 1 >= len(argv):
                break
            argv[i + 1] = new_path
            return argv
        for flag in _OUTPUT_FLAGS:
            if tok.startswith(flag + "="):
                argv[i] = f"{flag}={new_path}"
                return argv
    raise ConfigError("recorded command has no output path to override")


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    from . import __version__
    parser = argparse.ArgumentParser(
        prog="cspm",
        description="Lightweight automatic modulation classifier for I/Q "
                    "baseband: dataset synthesis, training, evaluation.")
    parser.add_argument("--version", action="version", version=f"cspm {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="synthesize a labeled I/Q dataset")
    p.add_argument("-o", "--output", required=True, help="container file to write")
    p.add_argument("--classes", default="all",
                   help='"all" or a comma-separated subset of the 11 classes')
    p.add_argument("--snr", default="-20:2:20",
                   help="start:step:stop (inclusive) or comma list, in dB")
    p.add_argument("--per-cell", type=int, default=100,
                   help="examples per (class, SNR) cell")
    p.add_argument("--length", type=int, default=128, help="samples per example")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sps", type=int, default=8, help="samples per symbol")
    p.add_argument("--pulse", default="rrc", choices=("rrc", "rect"))
    p.add_argument("--no-random-phase", action="store_true")
    p.add_argument("--max-cfo", type=float, default=0.005,
                   help="max carrier offset, cycles/sample")
    p.add_argument("--timing-jitter", type=float, default=0.01,
                   help="resample ratio spread around 1.0")
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("train", help="train a model on a dataset container")
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir", required=True)
    _add_model_args(p)
    _add_split_args(p)
    _add_train_args(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--split", default="test",
                   choices=("train", "val", "test", "all"))
    p.add_argument("--batch-size", type=int, default=512)
    _add_split_args(p)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="train and score several variants "
                                      "on one shared split")
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--variants",
                   default="full,phase_motion_only,fixed_morlet,learnable_morlet")
    _add_model_args(p)
    _add_split_args(p)
    _add_train_args(p)
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("gradcheck", help="verify analytic gradients against "
                                         "finite differences")
    p.add_argument("--variant", default="full",
                   choices=("full", "phase_motion_only", "fixed_morlet",
                            "learnable_morlet"))
    p.add_argument("--precision", default="f64", choices=("f64", "f32"))
    p.add_argument("--tol", type=float, default=None,
                   help="override tolerance (default 1e-6 f64, 1e-4 f32)")
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch-size", type=int, default=3)
    p.add_argument("--inject-fault", action="store_true",
                   help="flip one gradient's sign (checker self-test)")
    p.add_argument("--out-dir", default=None, help="also write gradcheck.json")
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("inspect-bank", help="dump filter taps and frequency "
                                            "responses as CSV")
    p.add_argument("--checkpoint", default=None,
                   help="read the bank from a checkpoint (default: fresh init)")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n-fft", type=int, default=512)
    _add_model_args(p)
    p.set_defaults(func=_cmd_inspect_bank)

    p = sub.add_parser("dump-features", help="dump one example's feature map "
                                             "as CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--out-dir", required=True)
    _add_model_args(p)
    p.set_defaults(func=_cmd_dump_features)

    p = sub.add_parser("rerun", help="replay a command from its manifest.json")
    p.add_argument("manifest")
    p.add_argument("--out-dir", default=None,
                   help="redirect the replayed command's output path")
    p.set_defaults(func=_cmd_rerun)

    return parser


def main(argv=None) -> int:
    _setup_threads()
    if argv is None:
        argv = sys.argv[1:]
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args._argv = list(argv)
    from .errors import ConfigError, FormatError, NumericError, ShapeError
    try:
        return args.func(args)
    except (ConfigError, ShapeError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc.strerror or exc}: {getattr(exc, 'filename', '') or ''}",
              file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
