"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Criteria 5 to 7 train real desk-scale models and dominate the runtime
(a little over an hour on one core).
"""

import json
import time

import numpy as np
import pytest

import conftest
import oracles
from evtrack.boxes import BBoxN, giou, iou
from evtrack.checkpoint import save_checkpoint
from evtrack.cli import main as cli_main
from evtrack.evaluation import EvalReport, OracleTracker, StaticTracker, auc, emit_report, evaluate, run_ope, success_curve
from evtrack.events import EventStream, aggregate_frame, iter_windows, window_events
from evtrack.functional import AttentionConfig, conv2d, depthwise_xcorr, multi_head_attention, softmax
from evtrack.learning import PAPER_TRAIN, PairSampler, TrainConfig, box_loss, lr_schedule, train
from evtrack.model import DESK, DANet, ablation
from evtrack.sim import make_dataset, save_dataset
from evtrack.tensor import Tensor, grad_check

from test_tensor import BINARY, UNARY

pytestmark = pytest.mark.acceptance


def verdict(n: int, ok: bool, detail: str) -> None:
    line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'} | {detail}"
    conftest.ACCEPTANCE_LINES.append(line)
    print("\n" + line)


def check(n: int, ok: bool, detail: str) -> None:
    verdict(n, ok, detail)
    assert ok, detail


# -- 1 --------------------------------------------------------------------------------


def test_criterion_1_full_model_gradient():
    seqs = make_dataset("plain", 2, 11)
    batch = PairSampler(seqs, DESK, TrainConfig()).batch(np.random.default_rng(0), 2)
    net = DANet(DESK, seed=0)
    assert DESK.d_model == 32 and DESK.grid == 12

    def f():
        pred = net.forward(batch.template, batch.search, training=True, rng=np.random.default_rng(3))
        return box_loss(pred, batch.gt)[0]

    t0 = time.perf_counter()
    err = grad_check(f, net.parameters(), eps=1e-6, n_samples=250, rng=np.random.default_rng(1))
    dt = time.perf_counter() - t0
    check(1, err < 1e-3 and dt < 300, f"max rel err {err:.2e} over 250 coords (< 1e-3), {dt:.0f} s")


# -- 2 --------------------------------------------------------------------------------


def test_criterion_2_primitive_oracles():
    rng = np.random.default_rng(2)
    worst = {"conv2d": 0.0, "depthwise_xcorr": 0.0, "multi_head_attention": 0.0, "softmax": 0.0}
    for _ in range(100):
        n, cin, cout = rng.integers(1, 3), rng.integers(1, 4), rng.integers(1, 4)
        k = int(rng.choice([1, 3, 5]))
        stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, 3))
        size = int(rng.integers(k, 10))
        x, w, b = rng.normal(size=(n, cin, size, size)), rng.normal(size=(cout, cin, k, k)), rng.normal(size=cout)
        got = conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, pad=pad).data
        worst["conv2d"] = max(worst["conv2d"], np.max(np.abs(got - oracles.conv2d(x, w, b, stride, pad))))

        g, kk = int(rng.integers(3, 10)), int(rng.choice([1, 3, 5]))
        kk = min(kk, g if g % 2 else g - 1)
        s, t = rng.normal(size=(n, cin, g, g)), rng.normal(size=(n, cin, kk, kk))
        p = (kk - 1) // 2
        got = depthwise_xcorr(Tensor(s), Tensor(t), pad=p).data
        worst["depthwise_xcorr"] = max(worst["depthwise_xcorr"], np.max(np.abs(got - oracles.depthwise_xcorr(s, t, p))))

        heads = int(rng.integers(1, 4))
        d = heads * int(rng.integers(1, 5))
        L, M = int(rng.integers(1, 7)), int(rng.integers(1, 7))
        q, kv = rng.normal(size=(L, d)), rng.normal(size=(M, d))
        ws = [rng.normal(size=(d, d)) for _ in range(4)]
        cfg = AttentionConfig.split(d, heads)
        got = multi_head_attention(Tensor(q), Tensor(kv), Tensor(kv), cfg, *map(Tensor, ws)).data
        want = oracles.mha(q, kv, kv, *ws, heads)
        worst["multi_head_attention"] = max(worst["multi_head_attention"], np.max(np.abs(got - want)))

        z = rng.normal(scale=5.0, size=(int(rng.integers(1, 6)), int(rng.integers(1, 12))))
        worst["softmax"] = max(worst["softmax"], np.max(np.abs(softmax(Tensor(z)).data - oracles.softmax_rows(z))))

    grad_worst = 0.0
    for name, fn in list(UNARY.items()):
        for seed in range(3):
            r = np.random.default_rng(seed)
            data = r.normal(size=tuple(r.integers(2, 6, size=2)))
            xt = Tensor(np.sign(data) * (np.abs(data) + 0.1), requires_grad=True)
            wt = Tensor(r.normal(size=fn(xt).shape))
            grad_worst = max(grad_worst, grad_check(lambda: (fn(xt) * wt).sum(), [xt], n_samples=30, rng=r))
    for name, fn in list(BINARY.items()):
        for seed in range(3):
            r = np.random.default_rng(seed)
            shape = tuple(r.integers(2, 6, size=2))
            a, bb = (Tensor(np.sign(v) * (np.abs(v) + 0.1), requires_grad=True) for v in r.normal(size=(2,) + shape))
            wt = Tensor(r.normal(size=fn(a, bb).shape))
            grad_worst = max(grad_worst, grad_check(lambda: (fn(a, bb) * wt).sum(), [a, bb], n_samples=30, rng=r))
    # the composite primitives
    r = np.random.default_rng(5)
    xt = Tensor(r.normal(size=(2, 2, 7, 7)), requires_grad=True)
    wt = Tensor(r.normal(size=(3, 2, 3, 3)), requires_grad=True)
    bt = Tensor(r.normal(size=3), requires_grad=True)
    grad_worst = max(grad_worst, grad_check(lambda: (conv2d(xt, wt, bt, stride=2, pad=1) ** 2).sum(), [xt, wt, bt], n_samples=40, rng=r))
    st_ = Tensor(r.normal(size=(2, 3, 6, 6)), requires_grad=True)
    tt = Tensor(r.normal(size=(2, 3, 3, 3)), requires_grad=True)
    grad_worst = max(grad_worst, grad_check(lambda: (depthwise_xcorr(st_, tt, pad=1) ** 2).sum(), [st_, tt], n_samples=40, rng=r))
    cfg = AttentionConfig.split(6, 2)
    qs = [Tensor(r.normal(size=(4, 6)), requires_grad=True) for _ in range(2)]
    ws = [Tensor(r.normal(size=(6, 6)) / 2, requires_grad=True) for _ in range(4)]
    grad_worst = max(grad_worst, grad_check(lambda: (multi_head_attention(qs[0], qs[1], qs[1], cfg, *ws) ** 2).sum(), qs + ws, n_samples=60, rng=r))

    ok = max(worst.values()) < 1e-12 and grad_worst < 1e-6
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f" (< 1e-12, 100 shapes each); grad_check worst {grad_worst:.1e} (< 1e-6)"
    check(2, ok, detail)


# -- 3 --------------------------------------------------------------------------------


def test_criterion_3_aggregation_oracle():
    rng = np.random.default_rng(3)
    mismatches = partition_errors = 0
    total_events = 0
    for _ in range(1000):
        n = int(np.exp(rng.uniform(0, np.log(1e5))))
        w, h = int(rng.integers(1, 64)), int(rng.integers(1, 64))
        t = rng.integers(0, 1_000_000, size=n)
        x, y = rng.integers(0, w, size=n), rng.integers(0, h, size=n)
        p = np.where(rng.random(n) < 0.5, -1, 1)
        s = EventStream.from_arrays(w, h, t, x, y, p)
        ev = s.events
        t0, dt = int(rng.integers(0, 500_000)), int(rng.integers(1, 600_000))
        got = aggregate_frame(window_events(s, t0, dt)).grid
        want = oracles.aggregate(ev["t"].tolist(), ev["x"].tolist(), ev["y"].tolist(), ev["p"].tolist(), w, h, t0, t0 + dt)
        mismatches += not np.array_equal(got, want)
        pieces = list(iter_windows(s, int(rng.integers(1_000, 300_000))))
        seen = np.concatenate([pc.events for pc in pieces]) if pieces else ev[:0]
        inside = all(np.all((pc.events["t"] >= pc.t0) & (pc.events["t"] < pc.t0 + pc.dt)) for pc in pieces)
        partition_errors += not (len(seen) == n and np.array_equal(seen, ev) and inside)
        total_events += n
    check(3, mismatches == 0 and partition_errors == 0,
          f"1000 streams ({total_events} events): {mismatches} frame mismatches, {partition_errors} partition errors")


# -- 4 --------------------------------------------------------------------------------


def test_criterion_4_metric_oracles(plain_small):
    rng = np.random.default_rng(4)
    auc_err = 0.0
    for _ in range(300):
        ious = rng.uniform(0, 1, size=int(rng.integers(1, 300)))
        ious[rng.random(ious.size) < 0.2] = np.round(ious[: 1], 2)[0]  # exercise exact ties with the grid
        auc_err = max(auc_err, abs(auc(success_curve(ious)) - oracles.auc_by_integration(ious.tolist())))

    box_err = 0.0
    for _ in range(1000):
        a = BBoxN(*rng.uniform(0.1, 0.9, 2), *rng.uniform(0.05, 0.5, 2))
        b = BBoxN(*rng.uniform(0.1, 0.9, 2), *rng.uniform(0.05, 0.5, 2))
        ri, rg = oracles.raster_overlap(a.as_array(), b.as_array())
        box_err = max(box_err, abs(iou(a, b) - ri), abs(giou(a, b) - rg))

    reports = [evaluate(lambda s: OracleTracker(s.gt_boxes), plain_small), evaluate(lambda s: StaticTracker(), plain_small)]
    reports.append(evaluate(DANet(DESK, seed=0), plain_small))
    reports.extend(GENERATED_REPORTS)
    monotone = all(np.all(np.diff(r.curves["success"]["values"]) <= 0) for r in reports)
    ok = auc_err < 1e-6 and box_err < 2e-3 and monotone
    check(4, ok, f"AUC vs integration {auc_err:.1e} (< 1e-6); IoU/GIoU vs raster {box_err:.2e} on 1000 pairs (< 2e-3); "
                 f"success monotone on {len(reports)} reports: {monotone}")


GENERATED_REPORTS: list[EvalReport] = []


# -- 5, 6, 7 ---------------------------------------------------------------------------

SEEDS = (0, 1, 2)
PLAIN_TRAIN = dict()
DISTRACTOR_TRAIN = dict(epochs=40, pairs_per_epoch=512)


def train_and_eval(model_cfg, train_kw, seed, train_seqs, test_seqs):
    c0 = time.process_time()
    res = train(model_cfg, TrainConfig(seed=seed, **train_kw), train_seqs)
    cpu = time.process_time() - c0
    rep = evaluate(res.model, test_seqs)
    GENERATED_REPORTS.append(rep)
    return rep.auc, cpu


@pytest.fixture(scope="module")
def plain_split():
    return make_dataset("plain", 32, 0, "train"), make_dataset("plain", 10, 0, "test")


@pytest.fixture(scope="module")
def distractor_split():
    return make_dataset("distractor", 32, 0, "train"), make_dataset("distractor", 10, 0, "test")


@pytest.fixture(scope="module")
def distractor_runs(distractor_split):
    tr, te = distractor_split
    out = {}
    for name in ("full", "tan_only", "no_shortcut"):
        out[name] = [train_and_eval(ablation(DESK, name), DISTRACTOR_TRAIN, s, tr, te)[0] for s in SEEDS]
    return out


def test_criterion_5_plain_training(plain_split):
    tr, te = plain_split
    runs = [train_and_eval(DESK, PLAIN_TRAIN, s, tr, te) for s in SEEDS]
    aucs = [a for a, _ in runs]
    cpu = [c for _, c in runs]
    med = float(np.median(aucs))
    check(5, med >= 0.60 and max(cpu) <= 1800,
          f"plain test AUC {[round(a, 3) for a in aucs]}, median {med:.3f} (>= 0.60); CPU min per seed {[round(c / 60, 1) for c in cpu]} (<= 30)")


def fmt(vals):
    return "[" + ", ".join(f"{v:.3f}" for v in vals) + "]"


def test_criterion_6_motion_branch_helps(distractor_runs):
    full, tan = np.median(distractor_runs["full"]), np.median(distractor_runs["tan_only"])
    check(6, full >= tan - 0.005,
          f"distractor AUC full {fmt(distractor_runs['full'])} median {full:.3f} vs TAN-only {fmt(distractor_runs['tan_only'])} median {tan:.3f} (tolerance 0.005)")


def test_criterion_7_shortcut_helps(distractor_runs):
    full, nos = np.median(distractor_runs["full"]), np.median(distractor_runs["no_shortcut"])
    check(7, full >= nos - 0.01,
          f"distractor AUC full median {full:.3f} vs no-shortcut {fmt(distractor_runs['no_shortcut'])} median {nos:.3f} (tolerance 0.01)")


# -- 8 --------------------------------------------------------------------------------


def test_criterion_8_determinism(tmp_path):
    def tree(root):
        return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}

    digests = []
    for run in ("a", "b"):
        root = tmp_path / run
        seqs = make_dataset("combined", 3, 8, "train")
        save_dataset(seqs, root / "data")
        res = train(DESK, TrainConfig(seed=8, epochs=2, pairs_per_epoch=32, batch_size=8), seqs, out_dir=root / "ckpt")
        emit_report(evaluate(res.model, seqs), root / "report")
        digests.append(tree(root))
    a, b = digests
    same = {part: all(a[k] == b[k] for k in a if k.startswith(part)) for part in ("data/", "ckpt/", "report/")}
    ok = a.keys() == b.keys() and all(same.values())
    check(8, ok, f"{len(a)} files compared; identical: " + ", ".join(f"{k.rstrip('/')} {v}" for k, v in same.items()))


# -- 9 --------------------------------------------------------------------------------


def test_criterion_9_ingestion_benchmark(tmp_path):
    assert cli_main(["bench", "--n-events", str(10**7), "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "bench.json").read_text())
    ok = rep["events"] == 10**7 and rep["events_per_second"] >= 1e6 and rep["constant_memory"]
    check(9, ok, f"{rep['events_per_second']:,.0f} events/s on 1e7 events (>= 1e6); traced peak "
                 f"{rep['traced_peak_full_bytes'] / 2**20:.1f} MiB full vs {rep['traced_peak_prefix_bytes'] / 2**20:.1f} MiB prefix; "
                 f"constant memory {rep['constant_memory']}")


# -- 10 -------------------------------------------------------------------------------


def test_criterion_10_full_scale_schedule():
    cfg = PAPER_TRAIN
    w_end = cfg.steps_per_epoch * cfg.warmup_epochs - 1
    first, peak = lr_schedule(0, cfg), lr_schedule(w_end, cfg)
    # both pieces evaluated in closed form at the boundary
    import math

    span = cfg.total_steps - 1 - w_end
    cosine_side = cfg.lr_peak * (1 + math.cos(math.pi * 0 / span)) / 2
    linear_side = cfg.lr_start + (cfg.lr_peak - cfg.lr_start) * w_end / w_end
    jump = abs(lr_schedule(w_end + 1, cfg) - peak)
    ok = first == 1e-5 and abs(peak - 8e-2) < 1e-12 and abs(cosine_side - linear_side) < 1e-12 and jump < 1e-6
    check(10, ok, f"step 0 {first:g}, warm-up end (step {w_end}) {peak:g}, boundary gap {abs(cosine_side - linear_side):.1e}, "
                  f"next-step change {jump:.1e}")
