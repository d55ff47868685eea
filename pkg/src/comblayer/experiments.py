"""Training, evaluation, cost accounting, sweeps and f0 trajectory logs."""
from concurrent.futures import ProcessPoolExecutor
import csv
from dataclasses import asdict, dataclass, field, replace
import logging
import math
from pathlib import Path
import time

import numpy as np

from . import nn
from .data import load_split, manifest_path, pcm_to_float
from .layer import save_comb_params
from .models import CHANNEL_PLAN, N_CLASSES, ModelSpec, TranscriptionNet

log = logging.getLogger(__name__)


class NumericalFailure(RuntimeError):
    """Training diverged; ``checkpoint`` points at the last good parameters."""

    def __init__(self, msg, checkpoint=None):
        super().__init__(msg)
        self.checkpoint = checkpoint


# ---------------------------------------------------------------- costs

@dataclass
class LayerCost:
    name: str
    params: int
    macs_per_sample: float


@dataclass
class CostReport:
    layers: list

    @property
    def first_layer(self):
        return self.layers[0]

    @property
    def total_params(self):
        return sum(l.params for l in self.layers)

    @property
    def total_macs_per_sample(self):
        return sum(l.macs_per_sample for l in self.layers)

    def rows(self):
        return [asdict(l) for l in self.layers]


def count_costs(spec):
    """Closed-form parameter and MAC counts, derived from layer shapes alone.

    MACs are per input audio sample at inference. The comb layer runs its
    recursion, one multiply-accumulate per sample per channel. A dense
    convolution costs C_out*C_in*L per output position; layers after pooling
    produce one position per ``pool_stride`` input samples. (A symmetric
    kernel, as in sinc filters, would halve the first-layer convolution
    cost; no such frontend is built here.)
    """
    C, k = spec.channels, spec.later_kernel
    if spec.frontend == "comb":
        first = LayerCost("comb", params=C, macs_per_sample=float(C))
    else:
        L = spec.conv_kernel
        first = LayerCost("conv1", params=C * (L + 1), macs_per_sample=C * L / spec.conv_stride)
    per_frame = 1.0 / spec.pool_stride
    return CostReport(layers=[
        first,
        LayerCost("conv2", params=C * (C * k + 1), macs_per_sample=C * C * k * per_frame),
        LayerCost("conv3", params=N_CLASSES * (C * k + 1),
                  macs_per_sample=N_CLASSES * C * k * per_frame),
    ])


# ---------------------------------------------------------------- metrics

def f1_counts(pred, target):
    pred = np.asarray(pred, dtype=bool)
    target = np.asarray(target, dtype=bool)
    tp = int(np.sum(pred & target))
    fp = int(np.sum(pred & ~target))
    fn = int(np.sum(~pred & target))
    return tp, fp, fn


def f1_from_counts(tp, fp, fn):
    """Micro F1. With no positives predicted and none present it is 1.0."""
    if tp + fp + fn == 0:
        return 1.0
    return 2.0 * tp / (2.0 * tp + fp + fn)


def frame_f1(pred, target):
    return f1_from_counts(*f1_counts(pred, target))


def predict_frames(net, pcm):
    """Binary (T', 12) note activity for one clip at threshold 0.5."""
    logits = net.forward(pcm_to_float(pcm)[None])[0]
    return (logits > 0.0).T


def evaluate_split(net, split):
    tp = fp = fn = 0
    for pcm, labels in zip(split.audio, split.labels):
        c = f1_counts(predict_frames(net, pcm), labels)
        tp, fp, fn = tp + c[0], fp + c[1], fn + c[2]
    return f1_from_counts(tp, fp, fn)


# ---------------------------------------------------------------- trajectories

@dataclass
class TrajectoryLog:
    steps: list = field(default_factory=list)
    f0: list = field(default_factory=list)
    wall: list = field(default_factory=list)

    def record(self, step, f0, wall):
        self.steps.append(int(step))
        self.f0.append(np.array(f0, dtype=np.float64))
        self.wall.append(float(wall))

    def as_array(self):
        return np.array(self.f0)

    def write_csv(self, path, every=10):
        """One row per ``every`` steps plus the final step; the last row gets cluster stats."""
        if not self.steps:
            raise ValueError("empty trajectory")
        M = self.f0[0].shape[0]
        keep = [i for i, s in enumerate(self.steps) if s % every == 0]
        if not keep or keep[-1] != len(self.steps) - 1:
            keep.append(len(self.steps) - 1)
        n_clusters, largest = f0_clusters(self.f0[-1])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "wall_s"] + ["f0_%d" % (m + 1) for m in range(M)]
                       + ["clusters", "largest_cluster"])
            for i in keep:
                tail = [n_clusters, largest] if i == keep[-1] else ["", ""]
                w.writerow([self.steps[i], "%.3f" % self.wall[i]]
                           + [repr(float(v)) for v in self.f0[i]] + tail)
        return len(keep)


def f0_clusters(f0, tol_hz=1.0):
    """Single-linkage groups of channels closer than ``tol_hz``: (count, largest size)."""
    f = np.sort(np.asarray(f0, dtype=np.float64))
    if f.size == 0:
        return 0, 0
    breaks = np.flatnonzero(np.diff(f) > tol_hz)
    sizes = np.diff(np.concatenate([[0], breaks + 1, [f.size]]))
    return int(sizes.size), int(sizes.max())


def read_trajectory_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    cols = [c for c in rows[0] if c.startswith("f0_")]
    return (np.array([int(r["step"]) for r in rows]),
            np.array([[float(r[c]) for c in cols] for r in rows]))


# ---------------------------------------------------------------- training

class CropSampler:
    """Random fixed-length crops aligned to the frame grid, silence-padded."""

    def __init__(self, split, spec, cfg, rng):
        self.split = split
        self.env = spec.env
        self.rng = rng
        self.batch = cfg.batch_size
        frames = max(1, int(round(cfg.crop_seconds * spec.sample_rate / spec.pool_stride)) - 1)
        self.frames = frames
        self.samples = spec.pool_window + (frames - 1) * spec.pool_stride

    def next(self):
        S = self.env.pool_stride
        x = np.zeros((self.batch, self.samples))
        y = np.zeros((self.batch, N_CLASSES, self.frames))
        picks = self.rng.integers(0, len(self.split.audio), self.batch)
        for b, i in enumerate(picks):
            pcm, lab = self.split.audio[i], self.split.labels[i]
            k = int(self.rng.integers(0, max(1, lab.shape[0] - self.frames + 1)))
            seg = pcm[k * S:k * S + self.samples]
            x[b, :seg.shape[0]] = pcm_to_float(seg)
            lseg = lab[k:k + self.frames]
            y[b, :, :lseg.shape[0]] = lseg.T
        return x, y


@dataclass
class TrainResult:
    checkpoint: Path
    best_valid_f1: float
    steps: int
    losses: list
    trajectory: TrajectoryLog
    valid_history: list
    stopped_early: bool


def save_model(path, net, extra=None):
    meta = {"spec": net.spec.to_dict()}
    meta.update(extra or {})
    nn.save_checkpoint(path, net.parameters(), meta)


def load_model(path):
    tensors, meta = nn.load_checkpoint(path)
    net = TranscriptionNet(ModelSpec(**meta["spec"]))
    net.set_parameters(tensors)
    return net, meta


def _write_losses(path, losses):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "loss"])
        for i, v in enumerate(losses, 1):
            w.writerow([i, repr(float(v))])


def train_model(spec, train, valid, cfg, out_dir, run_name=None, on_step=None):
    """Adam + global-norm clipping on frame-wise BCE, early-stopped on validation F1.

    ``train`` / ``valid`` are manifests, manifest paths or already loaded splits.
    Writes ``<run>.ckpt`` (best validation F1), ``losses_<run>.csv`` and, for
    comb models, ``trajectory_<run>.csv`` and ``<run>_comb.yaml`` to ``out_dir``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    run = run_name or spec.name
    train = train if hasattr(train, "audio") else load_split(train)
    valid = valid if hasattr(valid, "audio") else load_split(valid)
    for s in (train, valid):
        m = s.manifest
        if (m.sample_rate, m.pool_window, m.pool_stride) != (
                spec.sample_rate, spec.pool_window, spec.pool_stride):
            raise ValueError("dataset %s framing does not match the model spec" % m.split)

    rng = np.random.default_rng(cfg.seed)
    net = TranscriptionNet(spec, seed=int(rng.integers(2 ** 31)))
    sampler = CropSampler(train, spec, cfg, np.random.default_rng(int(rng.integers(2 ** 31))))
    state = nn.AdamState(lr=cfg.lr)
    ckpt = out_dir / ("%s.ckpt" % run)
    traj = TrajectoryLog()
    losses, history = [], []
    best_f1, best_params, bad_evals = -1.0, dict(net.parameters()), 0
    is_comb = spec.frontend == "comb"
    t0 = time.perf_counter()
    stopped_early = False
    step = 0

    def fail(msg):
        if best_f1 < 0:
            save_model(ckpt, net_from(last_good), {"step": step, "valid_f1": None})
        _write_losses(out_dir / ("losses_%s.csv" % run), losses)
        if traj.steps:
            traj.write_csv(out_dir / ("trajectory_%s.csv" % run), every=cfg.log_interval)
        raise NumericalFailure("step %d: %s; last good checkpoint kept at %s"
                               % (step, msg, ckpt), checkpoint=ckpt)

    def net_from(params):
        net.set_parameters(params)
        return net

    last_good = dict(net.parameters())
    for step in range(1, cfg.max_steps + 1):
        x, y = sampler.next()
        logits = net.forward(x)
        loss, dlogits = nn.bce_with_logits(logits, y)
        if not math.isfinite(loss):
            fail("loss is %r" % loss)
        if losses and loss > cfg.divergence_factor * max(losses[0], 1e-3):
            fail("loss %.4g exceeds %g x the first-step loss %.4g"
                 % (loss, cfg.divergence_factor, losses[0]))
        net.backward(dlogits)
        grads, _ = nn.clip_global_norm(net.gradients(), cfg.grad_clip)
        last_good = dict(net.parameters())
        try:
            new, state = nn.adam_step(last_good, grads, state)
        except FloatingPointError as exc:
            fail(str(exc))
        if not all(np.all(np.isfinite(v)) for v in new.values()):
            fail("non-finite parameters after update")
        net.set_parameters(new)
        losses.append(loss)
        if is_comb:
            traj.record(step, net.f0(), time.perf_counter() - t0)
        if on_step is not None:
            on_step(step, loss, net)
        if cfg.eval_interval and step % cfg.eval_interval == 0:
            f1 = evaluate_split(net, valid)
            history.append((step, f1))
            log.info("%s step %d loss %.4f valid F1 %.4f", run, step, loss, f1)
            if f1 > best_f1:
                best_f1, best_params, bad_evals = f1, dict(net.parameters()), 0
                save_model(ckpt, net, {"step": step, "valid_f1": f1})
            else:
                bad_evals += 1
                if bad_evals >= cfg.patience:
                    stopped_early = True
                    break

    if not history or history[-1][0] != step:
        f1 = evaluate_split(net, valid)
        history.append((step, f1))
        if f1 > best_f1:
            best_f1, best_params = f1, dict(net.parameters())
    net.set_parameters(best_params)
    save_model(ckpt, net, {"step": step, "valid_f1": best_f1})
    _write_losses(out_dir / ("losses_%s.csv" % run), losses)
    if is_comb:
        if traj.steps:
            traj.write_csv(out_dir / ("trajectory_%s.csv" % run), every=cfg.log_interval)
        save_comb_params(out_dir / ("%s_comb.yaml" % run), net.frontend.bank)
    return TrainResult(checkpoint=ckpt, best_valid_f1=best_f1, steps=step, losses=losses,
                       trajectory=traj, valid_history=history, stopped_early=stopped_early)


def evaluate_f1(checkpoint, manifest):
    """Micro-averaged frame-wise F1 of a saved model on a manifest's clips."""
    net, _ = load_model(checkpoint)
    split = manifest if hasattr(manifest, "audio") else load_split(manifest)
    m = split.manifest
    if m.pool_stride != net.spec.pool_stride or m.sample_rate != net.spec.sample_rate:
        raise ValueError("checkpoint frame rate does not match the dataset")
    return evaluate_split(net, split)


# ---------------------------------------------------------------- sweeps

PARETO_COLUMNS = ("frontend", "channels", "params", "macs_per_sample", "f1")


def plan_sweep(base, channels=CHANNEL_PLAN, frontends=("comb", "conv")):
    """The grid of model specs, frontend-major, channels ascending."""
    return [replace(base, frontend=fe, channels=c) for fe in frontends for c in sorted(channels)]


def _sweep_job(job):
    spec, cfg, data_dir, out_dir = job
    costs = count_costs(spec)
    row = {"frontend": spec.frontend, "channels": spec.channels,
           "params": costs.total_params, "macs_per_sample": costs.first_layer.macs_per_sample,
           "f1": float("nan"), "error": ""}
    try:
        result = train_model(spec, manifest_path(data_dir, "train"),
                             manifest_path(data_dir, "valid"), cfg, out_dir)
        row["f1"] = evaluate_f1(result.checkpoint, manifest_path(data_dir, "test"))
    except Exception as exc:  # one bad configuration must not sink the sweep
        log.exception("sweep run %s failed", spec.name)
        row["error"] = "%s: %s" % (type(exc).__name__, exc)
    return row


def dominance(rows):
    """For each parameter budget, the best F1 each frontend reaches within it.

    Budgets are the distinct parameter counts in ``rows``; only budgets that
    both frontends can meet are reported. Failed runs are ignored.
    """
    ok = [r for r in rows if math.isfinite(r["f1"])]
    out = []
    for budget in sorted({r["params"] for r in ok}):
        best = {}
        for fe in ("comb", "conv"):
            f1s = [r["f1"] for r in ok if r["frontend"] == fe and r["params"] <= budget]
            best[fe] = max(f1s) if f1s else None
        if best["comb"] is None or best["conv"] is None:
            continue
        winner = ("tie" if best["comb"] == best["conv"]
                  else "comb" if best["comb"] > best["conv"] else "conv")
        out.append({"budget_params": budget, "comb_f1": best["comb"],
                    "conv_f1": best["conv"], "winner": winner})
    return out


def write_pareto_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PARETO_COLUMNS)
        for r in rows:
            w.writerow([r["frontend"], r["channels"], r["params"],
                        repr(float(r["macs_per_sample"])),
                        "nan" if not math.isfinite(r["f1"]) else repr(float(r["f1"]))])


def read_pareto_csv(path):
    with open(path, newline="") as fh:
        return [{"frontend": r["frontend"], "channels": int(r["channels"]),
                 "params": int(r["params"]), "macs_per_sample": float(r["macs_per_sample"]),
                 "f1": float(r["f1"])} for r in csv.DictReader(fh)]


def sweep_pareto(base, cfg, data_dir, out_dir, channels=CHANNEL_PLAN,
                 frontends=("comb", "conv"), dry_run=False, workers=1):
    """Train every (frontend, channels) pair with shared seeds and tabulate cost vs F1.

    ``params`` counts the whole network and ``macs_per_sample`` the first layer
    only. Writes ``pareto.csv``, ``dominance.csv`` and, if any run failed,
    ``sweep_errors.txt`` to ``out_dir``. With ``dry_run`` nothing is trained
    and the planned specs are returned.
    """
    specs = plan_sweep(base, channels, frontends)
    if dry_run:
        return specs
    for split in ("train", "valid", "test"):
        if not manifest_path(data_dir, split).is_file():
            raise FileNotFoundError("missing %s" % manifest_path(data_dir, split))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = [(s, cfg, Path(data_dir), out_dir) for s in specs]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            rows = list(pool.map(_sweep_job, jobs))
    else:
        rows = [_sweep_job(j) for j in jobs]
    write_pareto_csv(out_dir / "pareto.csv", rows)
    summary = dominance(rows)
    with open(out_dir / "dominance.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, ["budget_params", "comb_f1", "conv_f1", "winner"],
                           lineterminator="\n")
        w.writeheader()
        w.writerows(summary)
    failed = [r for r in rows if r["error"]]
    if failed:
        with open(out_dir / "sweep_errors.txt", "w") as fh:
            for r in failed:
                fh.write("%s_%d\t%s\n" % (r["frontend"], r["channels"], r["error"]))
    return rows
