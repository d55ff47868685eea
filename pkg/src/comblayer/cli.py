"""Command-line entry point: ``comblayer <command> [flags]``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error
(missing or malformed files), 3 numerical failure during training.
``COMBLAYER_OUTPUT_ROOT`` sets the directory that default output paths
live under (the current directory if unset).
"""
import argparse
import csv
from dataclasses import replace
import logging
import math
import os
from pathlib import Path
import sys
import time

import numpy as np

from . import _accel
from .comb import (AudioSignal, CombChannelConfig, CombConfigError, ScalingConfig,
                   continuous_delay, discretize_for_inference, magnitude_response,
                   measured_gain)
from .config import ConfigError, load_model_spec, load_run_config
from .data import DatasetManifest, LabelGrid, generate_dataset, load_split, manifest_path
from .experiments import (NumericalFailure, count_costs, evaluate_f1, f1_counts,
                          f1_from_counts, load_model, read_trajectory_csv, sweep_pareto,
                          train_model)
from .layer import INFERENCE, TRAINING, comb_layer_forward, init_params, load_comb_params
from .svg import line_plot
from .wav import WavFormatError, wav_write

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3
ENV_OUTPUT_ROOT = "COMBLAYER_OUTPUT_ROOT"

log = logging.getLogger("comblayer")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, "%s: error: %s\n" % (self.prog, message))


def output_root():
    return Path(os.environ.get(ENV_OUTPUT_ROOT, "."))


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


# ---------------------------------------------------------------- synth

def cmd_synth(args):
    counts = {"train": args.train, "valid": args.valid, "test": args.test}
    bad = [k for k, v in counts.items() if v < 1]
    if bad:
        raise UsageError("clip counts must be positive (%s)" % ", ".join(bad))
    out = Path(args.out) if args.out else output_root() / "data"
    ms = generate_dataset(out, seed=args.seed, counts=counts, jobs=args.jobs)
    for split, m in ms.items():
        print("%s: %d clips -> %s" % (split, len(m.clips), manifest_path(out, split)))
    return EXIT_OK


# ---------------------------------------------------------------- train

def cmd_train(args):
    rc = load_run_config(args.config)
    out = Path(args.out) if args.out else rc.out_dir
    cfg = rc.train
    if args.max_steps is not None:
        cfg = replace(cfg, max_steps=args.max_steps)
    for split in ("train", "valid"):
        if not manifest_path(rc.data_dir, split).is_file():
            raise FileNotFoundError("missing manifest %s" % manifest_path(rc.data_dir, split))
    try:
        res = train_model(rc.spec, manifest_path(rc.data_dir, "train"),
                          manifest_path(rc.data_dir, "valid"), cfg, out, run_name=rc.run_name)
    except NumericalFailure as exc:
        print("training diverged: %s" % exc, file=sys.stderr)
        return EXIT_NUMERICAL
    run = rc.run_name or rc.spec.name
    traj = out / ("trajectory_%s.csv" % run)
    if traj.is_file():
        steps, f0 = read_trajectory_csv(traj)
        (out / ("trajectory_%s.svg" % run)).write_text(line_plot(
            [("", steps, f0[:, m]) for m in range(f0.shape[1])],
            title="%s f0 trajectories" % run, xlabel="step", ylabel="f0 (Hz)"))
    print("checkpoint: %s" % res.checkpoint)
    print("steps: %d%s" % (res.steps, " (early stop)" if res.stopped_early else ""))
    print("final validation F1: %.4f" % res.best_valid_f1)
    if args.test and manifest_path(rc.data_dir, "test").is_file():
        print("test F1: %.4f" % evaluate_f1(res.checkpoint, manifest_path(rc.data_dir, "test")))
    return EXIT_OK


# ---------------------------------------------------------------- eval

def _prediction_file(pred_dir, rel):
    for cand in (pred_dir / rel, pred_dir / Path(rel).name):
        if cand.is_file():
            return cand
    raise FileNotFoundError("no prediction file for %s under %s" % (rel, pred_dir))


def cmd_eval(args):
    if bool(args.checkpoint) == bool(args.predictions):
        raise UsageError("give exactly one of --checkpoint or --predictions")
    manifest = DatasetManifest.read(args.manifest)
    if args.checkpoint:
        if not Path(args.checkpoint).is_file():
            raise FileNotFoundError("checkpoint not found: %s" % args.checkpoint)
        f1 = evaluate_f1(args.checkpoint, load_split(manifest))
    else:
        pred_dir = Path(args.predictions)
        tp = fp = fn = 0
        for clip in manifest.clips:
            truth = LabelGrid.from_csv(manifest.path(clip["labels"]), manifest.frame_rate)
            pred = LabelGrid.from_csv(_prediction_file(pred_dir, clip["labels"]),
                                      manifest.frame_rate)
            if pred.frames.shape != truth.frames.shape:
                raise ValueError("%s: %d predicted frames, %d labeled"
                                 % (clip["labels"], pred.frames.shape[0], truth.frames.shape[0]))
            c = f1_counts(pred.frames, truth.frames)
            tp, fp, fn = tp + c[0], fp + c[1], fn + c[2]
        f1 = f1_from_counts(tp, fp, fn)
    print("F1: %.6f" % f1)
    return EXIT_OK


# ---------------------------------------------------------------- bench

def _throughput(fn, n_samples, repeat):
    fn()  # warm up (and compile)
    best = math.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return n_samples / best


def cmd_bench(args):
    spec = load_model_spec(args.spec)
    report = count_costs(spec)
    first = report.first_layer
    print("%s (%s kernels)" % (spec.name, _accel.backend_name()))
    print("first layer: %g MACs/sample, %d params" % (first.macs_per_sample, first.params))
    for row in report.layers:
        print("  %-6s params %9d  MACs/sample %12.4f" % (row.name, row.params,
                                                         row.macs_per_sample))
    print("total: %d params, %.4f MACs/sample" % (report.total_params,
                                                  report.total_macs_per_sample))
    if spec.frontend != "comb" or args.repeat == 0:
        return EXIT_OK
    n = int(args.seconds * spec.sample_rate)
    x = np.random.default_rng(0).standard_normal(n)
    params = init_params(spec.channels, spec.scaling, 0, spec.alpha, spec.echo_count,
                         spec.sample_rate)
    rates = {}
    for mode in (INFERENCE, TRAINING):
        rates[mode] = _throughput(lambda: comb_layer_forward(x, params, spec.env, mode),
                                  n, args.repeat)
        print("comb layer %-9s %.3e samples/s" % (mode, rates[mode]))
    print("recursive/sparse speed ratio: %.2f" % (rates[INFERENCE] / rates[TRAINING]))
    return EXIT_OK


# ---------------------------------------------------------------- respond

def cmd_respond(args):
    cfg = CombChannelConfig(f0=args.f0, alpha=args.alpha, sample_rate=args.fs)
    if args.f0 > args.fs / 2:
        raise CombConfigError("f0 %.3f Hz is above the Nyquist frequency %.3f Hz"
                              % (args.f0, args.fs / 2))
    freqs = np.arange(0, int(args.fs // 2) + 1, dtype=np.float64)
    gains = magnitude_response(cfg, freqs)
    measured = {}
    if args.measure:
        probes = set()
        for k in range(1, args.probes + 1):
            for f in (k * args.f0, (k - 0.5) * args.f0):
                if 0 < f < args.fs / 2:
                    probes.add(int(round(f)))
        chunks = []
        for f in sorted(probes):
            measured[f] = measured_gain(args.f0, args.alpha, f, args.fs)
            t = np.arange(int(0.25 * args.fs)) / args.fs
            chunks.append(0.5 * np.sin(2 * np.pi * f * t))
        wav_write(args.measure, AudioSignal(np.concatenate(chunks), args.fs))
    header = ["frequency_hz", "analytic_gain"] + (["measured_gain"] if args.measure else [])
    rows = []
    for f, g in zip(freqs, gains):
        row = [int(f), repr(float(g))]
        if args.measure:
            row.append(repr(measured[int(f)]) if int(f) in measured else "")
        rows.append(row)
    out = Path(args.out)
    _write_csv(out, header, rows)
    if args.svg:
        Path(args.svg).write_text(line_plot([("analytic", freqs, gains)], log_y=True,
                                            title="comb response, f0 %g Hz, alpha %g"
                                            % (args.f0, args.alpha),
                                            xlabel="frequency (Hz)", ylabel="gain"))
    K = continuous_delay(args.f0, args.fs)
    print("f0 %g Hz: delay %.4f samples (inference K = %d); peak gain %.4f"
          % (args.f0, K, discretize_for_inference(K), 1 / (1 - args.alpha)))
    for f in sorted(measured):
        print("  probe %6d Hz  analytic %.5f  measured %.5f"
              % (f, gains[f], measured[f]))
    return EXIT_OK


# ---------------------------------------------------------------- sweep

def cmd_sweep(args):
    rc = load_run_config(args.config)
    channels = tuple(int(c) for c in args.channels.split(",")) if args.channels else None
    kw = {"channels": channels} if channels else {}
    out = Path(args.out) if args.out else output_root() / "sweep"
    result = sweep_pareto(rc.spec, rc.train, rc.data_dir, out, dry_run=args.dry_run,
                          workers=args.workers, **kw)
    if args.dry_run:
        for spec in result:
            r = count_costs(spec)
            print("%-12s params %8d  first-layer MACs/sample %10g"
                  % (spec.name, r.total_params, r.first_layer.macs_per_sample))
        print("%d configurations planned, none trained" % len(result))
        return EXIT_OK
    for r in result:
        status = "F1 %.4f" % r["f1"] if not r["error"] else "FAILED %s" % r["error"]
        print("%s_%d params %d: %s" % (r["frontend"], r["channels"], r["params"], status))
    print("wrote %s" % (out / "pareto.csv"))
    return EXIT_OK


# ---------------------------------------------------------------- inspect

def cmd_inspect(args):
    if args.checkpoint:
        path = Path(args.checkpoint)
        if not path.is_file():
            raise FileNotFoundError("not found: %s" % path)
        if path.suffix in (".yaml", ".yml"):
            bank = load_comb_params(path)
        else:
            net, _ = load_model(path)
            if net.spec.frontend != "comb":
                raise UsageError("%s is a conv model; there are no comb channels" % path)
            bank = net.frontend.bank
    else:
        if args.channels is None:
            raise UsageError("give --checkpoint or --channels with --seed")
        if args.spec:
            scaling = load_model_spec(args.spec).scaling
        else:
            scaling = ScalingConfig(args.f_min_hz, args.f_max_hz)
        bank = init_params(args.channels, scaling, args.seed)
    w = np.asarray(bank.w, dtype=np.float64)
    f0, delay, K = bank.f0(), bank.delays(), bank.discrete_delays()
    print("channel,w,f0_hz,delay_samples,K")
    for m in range(bank.channels):
        print("%d,%r,%r,%r,%d" % (m, float(w[m]), float(f0[m]), float(delay[m]), int(K[m])))
    return EXIT_OK


# ---------------------------------------------------------------- wiring

def build_parser():
    p = _Parser(prog="comblayer", description="Learnable comb-filter frontends for audio.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate the synthetic note dataset")
    s.add_argument("--out", help="output directory (default $%s/data)" % ENV_OUTPUT_ROOT)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--train", type=int, default=2000)
    s.add_argument("--valid", type=int, default=200)
    s.add_argument("--test", type=int, default=200)
    s.add_argument("--jobs", type=int, default=1, help="worker processes")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train one model from a run config")
    s.add_argument("--config", required=True)
    s.add_argument("--out", help="override output.dir")
    s.add_argument("--max-steps", type=int)
    s.add_argument("--test", action="store_true", help="also report test F1")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="frame-wise F1 on a manifest")
    s.add_argument("--manifest", required=True)
    s.add_argument("--checkpoint")
    s.add_argument("--predictions", help="directory of label CSVs to score instead of a model")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("bench", help="analytic costs and comb layer throughput")
    s.add_argument("--spec", required=True, help="YAML with a model section")
    s.add_argument("--seconds", type=float, default=10.0, help="audio length to time")
    s.add_argument("--repeat", type=int, default=3, help="timed repetitions (0 skips timing)")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("respond", help="magnitude response of one comb channel")
    s.add_argument("--f0", type=float, required=True, help="Hz")
    s.add_argument("--alpha", type=float, default=0.9)
    s.add_argument("--fs", type=int, default=16000, help="Hz")
    s.add_argument("--out", required=True, help="CSV path")
    s.add_argument("--measure", metavar="WAV",
                   help="probe with sinusoids, add a measured column, save the probes here")
    s.add_argument("--probes", type=int, default=5, help="harmonics to probe")
    s.add_argument("--svg", help="also plot the analytic curve")
    s.set_defaults(func=cmd_respond)

    s = sub.add_parser("sweep", help="channel-count sweep over both frontends")
    s.add_argument("--config", required=True)
    s.add_argument("--out", help="default $%s/sweep" % ENV_OUTPUT_ROOT)
    s.add_argument("--channels", help="comma-separated channel counts")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--dry-run", action="store_true")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("inspect", help="per-channel w, f0, delay and integer delay")
    s.add_argument("--checkpoint", help="model checkpoint or comb YAML")
    s.add_argument("--channels", type=int, help="fresh init instead of a checkpoint")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--spec", help="YAML with a model section (for the scaling range)")
    s.add_argument("--f-min-hz", type=float, default=200.0)
    s.add_argument("--f-max-hz", type=float, default=500.0)
    s.set_defaults(func=cmd_inspect)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, CombConfigError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, WavFormatError, OSError, ValueError, KeyError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_DATA
    except (NumericalFailure, FloatingPointError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
