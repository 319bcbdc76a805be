"""``evtrack`` command line: simulate, train, eval, track, bench.

Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.  The
default seed is 0; the ``EVTRACK_SEED`` environment variable overrides it
and an explicit ``--seed`` overrides both.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import resource
import sys
import time
import tracemalloc
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .boxes import BBoxN
from .events import (
    DEFAULT_WINDOW_NS,
    EVENT_DTYPE,
    HEADER,
    MAGIC,
    EventFormatError,
    iter_windows,
    normalize_frame,
    aggregate_frame,
    parse_event_stream,
    stream_frames,
    voxel_grid,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
DEFAULT_SEED = 0
BENCH_EVENTS = 10_000_000

log = logging.getLogger("evtrack")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def default_seed() -> int:
    raw = os.environ.get("EVTRACK_SEED")
    if raw is None:
        return DEFAULT_SEED
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"EVTRACK_SEED must be an integer, got {raw!r}") from None


def _window_ns(args) -> int:
    if args.frame_rate is None:
        return DEFAULT_WINDOW_NS
    if args.frame_rate <= 0:
        raise UsageError("--frame-rate must be positive")
    return int(round(1e9 / args.frame_rate))


def _configs(args):
    from .learning import TRAIN_PRESETS, TrainConfig
    from .model import PRESETS, ModelConfig

    model_cfg = PRESETS[args.preset]
    if getattr(args, "model_config", None):
        model_cfg = ModelConfig.from_json(Path(args.model_config).read_text())
    train_cfg = TRAIN_PRESETS[args.preset]
    if getattr(args, "train_config", None):
        d = json.loads(Path(args.train_config).read_text())
        train_cfg = TrainConfig(**{**train_cfg.to_dict(), **d})
    return model_cfg, train_cfg


# ---------------------------------------------------------------------------
# subcommands


def _simulate_one(job):
    from .sim import emit_events, random_scene, sequence_seed

    scenario, seed, split, index = job
    seq = emit_events(random_scene(scenario, sequence_seed(seed, split, index)))
    seq.scenario, seq.name = scenario, f"{split}_{index:03d}"
    return seq


def cmd_simulate(args) -> int:
    from .sim import SCENARIOS, save_dataset

    if args.scenario not in SCENARIOS:
        raise UsageError(f"unknown scenario {args.scenario!r}; choose from {', '.join(SCENARIOS)}")
    if args.n < 1:
        raise UsageError("-n must be >= 1")
    jobs = [(args.scenario, args.seed, args.split, i) for i in range(args.n)]
    seqs = _map(_simulate_one, jobs, args.workers)
    path = save_dataset(seqs, args.out, {"scenario": args.scenario, "seed": args.seed, "split": args.split})
    print(f"wrote {len(seqs)} sequences to {path.parent}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .learning import train
    from .sim import load_dataset

    out = Path(args.out)
    final = out / "final.ckpt"
    if final.exists() and not args.force:
        raise UsageError(f"{final} exists; pass --force to overwrite")
    model_cfg, train_cfg = _configs(args)
    over = {"seed": args.seed}
    if args.epochs is not None:
        over["epochs"] = args.epochs
        over["warmup_epochs"] = min(train_cfg.warmup_epochs, args.epochs)
    if args.pairs_per_epoch is not None:
        over["pairs_per_epoch"] = args.pairs_per_epoch
    if args.representation is not None:
        over["representation"] = args.representation
    train_cfg = replace(train_cfg, **over)
    if train_cfg.representation == "voxel":
        model_cfg = replace(model_cfg, in_channels=train_cfg.voxel_bins)
    seqs = load_dataset(args.data)
    res = train(model_cfg, train_cfg, seqs, out_dir=out)
    print(f"trained {train_cfg.total_steps} steps, final epoch loss {res.epoch_losses()[-1]:.4f}; checkpoint {final}")
    return EXIT_OK


def _load_model(args):
    from .checkpoint import load_checkpoint
    from .model import ModelConfig

    want = ModelConfig.from_json(Path(args.model_config).read_text()) if args.model_config else None
    model, manifest = load_checkpoint(args.checkpoint, want)
    rep = manifest.get("meta", {}).get("train_config", {}).get("representation", "frame")
    bins = manifest.get("meta", {}).get("train_config", {}).get("voxel_bins", 5)
    if args.representation is not None and args.representation != rep:
        raise ValueError(f"checkpoint was trained on {rep!r} inputs, not {args.representation!r}")
    return model, rep, bins


def _eval_one(job):
    from .evaluation import OracleTracker, run_ope

    tracker, seq, rep, bins = job
    if tracker is None:
        tracker = lambda s: OracleTracker(s.gt_boxes)  # noqa: E731
    return run_ope(tracker, [seq], rep, bins)[0]


def cmd_eval(args) -> int:
    from .evaluation import EvalReport, emit_report
    from .sim import load_dataset

    seqs = load_dataset(args.data)
    if args.oracle_stub:
        model, rep, bins = None, "frame", 5
    else:
        if not args.checkpoint:
            raise UsageError("eval needs --checkpoint unless --oracle-stub is given")
        model, rep, bins = _load_model(args)
    results = _map(_eval_one, [(model, s, rep, bins) for s in seqs], args.workers)
    report = EvalReport.build(results)
    emit_report(report, args.out)
    s = report.scalars
    print(
        f"AUC {s['auc']:.4f}  OP50 {s['op50']:.4f}  OP75 {s['op75']:.4f}  "
        f"P@20 {s['precision_20']:.4f}  NP@0.2 {s['norm_precision_0.2']:.4f}  "
        f"excluded {report.excluded_frames}"
    )
    return EXIT_OK


def _parse_box(text: str) -> BBoxN:
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        vals = []
    if len(vals) != 4:
        raise UsageError(f"--init-box wants cx,cy,w,h, got {text!r}")
    box = BBoxN(*vals)
    if not box.is_valid():
        raise UsageError(f"--init-box {text!r} is not a normalized box with positive size")
    return box


def _parse_geometry(text: str | None):
    if text is None:
        return None
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise UsageError(f"--geometry wants WIDTHxHEIGHT, got {text!r}") from None
    return w, h


def cmd_track(args) -> int:
    from .tracker import DANetTracker

    box = _parse_box(args.init_box)
    model, rep, bins = _load_model(args)
    stream = parse_event_stream(args.events, geometry=_parse_geometry(args.geometry))
    dt = _window_ns(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dump = out / "heatmaps" if args.dump_heatmaps else None
    trk = DANetTracker(model, dump_dir=dump)
    rows = ["frame,cx,cy,w,h"]
    for k, sl in enumerate(iter_windows(stream, dt)):
        x = normalize_frame(aggregate_frame(sl))[None] if rep == "frame" else np.clip(voxel_grid(sl, bins), -5, 5) / 5
        if k == 0:
            trk.init(x, box)
            continue
        b = trk.update(x)
        rows.append(f"{k},{b.cx:.6f},{b.cy:.6f},{b.w:.6f},{b.h:.6f}")
    (out / "track.csv").write_text("\n".join(rows) + "\n")
    print(f"tracked {len(rows) - 1} windows; wrote {out / 'track.csv'}")
    return EXIT_OK


def write_synthetic_events(path, n_events: int, width: int = 346, height: int = 260, seed: int = 0, chunk: int = 1 << 20) -> None:
    """Uniform random events at 1 Mev/s of sensor time, written in bounded memory."""
    rng = np.random.default_rng(seed)
    with open(path, "wb") as fh:
        fh.write(np.array([(MAGIC, width, height)], dtype=HEADER).tobytes())
        done = 0
        while done < n_events:
            m = min(chunk, n_events - done)
            ev = np.empty(m, dtype=EVENT_DTYPE)
            # 1000 ns per event on average keeps the stream time-sorted across chunks
            ev["t"] = np.uint64(done * 1000) + np.sort(rng.integers(0, m * 1000, size=m)).astype(np.uint64)
            ev["x"] = rng.integers(0, width, size=m)
            ev["y"] = rng.integers(0, height, size=m)
            ev["p"] = np.where(rng.random(m) < 0.5, -1, 1)
            fh.write(ev.tobytes())
            done += m


def _aggregate_file(path, dt, max_windows=None) -> int:
    n_windows = 0
    for _ in stream_frames(path, dt):
        n_windows += 1
        if max_windows is not None and n_windows >= max_windows:
            break
    return n_windows


def cmd_bench(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.events:
        path = Path(args.events)
    else:
        path = out / "bench_events.evt"
        write_synthetic_events(path, args.n_events, seed=args.seed)
    n_events = (path.stat().st_size - HEADER.itemsize) // EVENT_DTYPE.itemsize
    dt = _window_ns(args)
    t0 = time.perf_counter()
    n_windows = _aggregate_file(path, dt)
    elapsed = time.perf_counter() - t0
    rate = n_events / elapsed if elapsed > 0 else float("inf")
    # traced peak over a short prefix vs the whole stream
    tracemalloc.start()
    _aggregate_file(path, dt, max_windows=max(1, n_windows // 10))
    short_peak = tracemalloc.get_traced_memory()[1]
    tracemalloc.reset_peak()
    _aggregate_file(path, dt)
    full_peak = tracemalloc.get_traced_memory()[1]
    tracemalloc.stop()
    constant = full_peak <= 1.5 * short_peak + (1 << 20)
    report = {
        "events": int(n_events),
        "windows": int(n_windows),
        "seconds": elapsed,
        "events_per_second": rate,
        "peak_rss_bytes": resource.getrusage(resource.RUSAGE_SELF).ru_maxrss * 1024,
        "traced_peak_prefix_bytes": int(short_peak),
        "traced_peak_full_bytes": int(full_peak),
        "constant_memory": bool(constant),
    }
    (out / "bench.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(
        f"{n_events} events in {elapsed:.2f} s: {rate:,.0f} events/s; "
        f"peak RSS {report['peak_rss_bytes'] / 2**20:.1f} MiB; constant memory: {constant}"
    )
    return EXIT_OK


def _map(fn, jobs, workers: int):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, jobs))


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="evtrack", description="Event-based single-object tracking toolkit.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, preset=True):
        sp.add_argument("--seed", type=int, default=None, help="RNG seed (default 0, or $EVTRACK_SEED)")
        sp.add_argument("--workers", type=int, default=1, help="worker processes")
        sp.add_argument("--out", required=True, help="output directory")
        if preset:
            sp.add_argument("--preset", choices=("desk", "paper"), default="desk")

    s = sub.add_parser("simulate", help="generate a synthetic dataset")
    s.add_argument("--scenario", required=True)
    s.add_argument("-n", type=int, required=True, help="number of sequences")
    s.add_argument("--split", choices=("train", "val", "test"), default="train")
    common(s, preset=False)
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("train", help="train a model on a dataset")
    t.add_argument("--data", required=True)
    t.add_argument("--model-config")
    t.add_argument("--train-config")
    t.add_argument("--epochs", type=int)
    t.add_argument("--pairs-per-epoch", type=int)
    t.add_argument("--representation", choices=("frame", "voxel"))
    t.add_argument("--force", action="store_true", help="overwrite an existing checkpoint")
    common(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="one-pass evaluation on a dataset")
    e.add_argument("--data", required=True)
    e.add_argument("--checkpoint")
    e.add_argument("--model-config", help="expected model config; mismatches are errors")
    e.add_argument("--oracle-stub", action="store_true", help="score a tracker that returns the ground truth")
    e.add_argument("--representation", choices=("frame", "voxel"))
    common(e)
    e.set_defaults(func=cmd_eval)

    k = sub.add_parser("track", help="track one target through an event file")
    k.add_argument("--checkpoint", required=True)
    k.add_argument("--events", required=True)
    k.add_argument("--init-box", required=True, help="cx,cy,w,h normalized to the image")
    k.add_argument("--geometry", help="WIDTHxHEIGHT, needed for CSV event files")
    k.add_argument("--model-config")
    k.add_argument("--frame-rate", type=float, help="aggregation rate in Hz (default 40)")
    k.add_argument("--representation", choices=("frame", "voxel"))
    k.add_argument("--dump-heatmaps", action="store_true")
    common(k)
    k.set_defaults(func=cmd_track)

    b = sub.add_parser("bench", help="measure streaming aggregation throughput")
    b.add_argument("--events", help="binary event file (default: generate one in --out)")
    b.add_argument("--n-events", type=int, default=BENCH_EVENTS)
    b.add_argument("--frame-rate", type=float)
    common(b, preset=False)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    from .learning import NumericalError

    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    try:
        if args.seed is None:
            args.seed = default_seed()
        if args.workers < 1:
            raise UsageError("--workers must be >= 1")
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"evtrack: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, FloatingPointError) as exc:
        step = getattr(exc, "step", None)
        print(f"evtrack: numeric failure{f' at step {step}' if step is not None else ''}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (EventFormatError, OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"evtrack: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
