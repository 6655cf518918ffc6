"""Stacked-block network assembly, metrics, and the training harness.

A network is per-sensor stacks of spectral blocks, feature
concatenation across sensors, a merged stack, then time-averaging into
a dense softmax head. Every block runs: multi-resolution STFT ->
optional cross-resolution interleave -> one shared learnable spectral
op per resolution (each contributing out_features/|window_set|
features) -> optional low-pass pooling -> inverse STFT per resolution
-> feature concatenation -> ReLU.
"""

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from . import _kernels, autograd as ag, specops
from . import data as data_mod
from .data import Dataset
from .errors import ConfigError, ShapeError
from .specops import PoolSpec
from .transform import validate_window_set

OP_KINDS = ("filter", "conv")


@dataclass
class BlockConfig:
    """One spectral block: window set, op kind, widths, and options."""

    window_set: tuple
    op_kind: str = "filter"
    out_features: int = 16
    interleave: bool = True
    pool: Optional[PoolSpec] = None
    interp_mode: str = "linear"
    tau_base: Optional[int] = None
    kernel_size: int = 3

    def __post_init__(self):
        self.window_set = validate_window_set(self.window_set)
        if self.op_kind not in OP_KINDS:
            raise ConfigError(f"unknown op kind {self.op_kind!r}")
        if self.out_features % len(self.window_set) != 0:
            raise ConfigError(
                f"out_features={self.out_features} not divisible by "
                f"|window_set|={len(self.window_set)}"
            )
        if self.interp_mode not in specops.INTERP_MODES:
            raise ConfigError(f"unknown interpolation mode {self.interp_mode!r}")
        if self.kernel_size % 2 != 1:
            raise ConfigError(f"kernel_size={self.kernel_size} must be odd")

    @property
    def features_per_resolution(self) -> int:
        return self.out_features // len(self.window_set)

    @property
    def filter_tau_base(self) -> int:
        return self.tau_base if self.tau_base is not None else max(self.window_set)

    @property
    def conv_tau_base(self) -> int:
        return min(self.window_set)

    def to_json(self) -> dict:
        return {
            "window_set": list(self.window_set),
            "op": self.op_kind,
            "out_features": self.out_features,
            "interleave": self.interleave,
            "pool": None if self.pool is None else str(self.pool.rho),
            "interp": self.interp_mode,
            "tau_base": self.tau_base,
            "kernel_size": self.kernel_size,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "BlockConfig":
        pool = obj.get("pool")
        return cls(
            window_set=tuple(obj["window_set"]),
            op_kind=obj.get("op", "filter"),
            out_features=obj.get("out_features", 16),
            interleave=obj.get("interleave", True),
            pool=None if pool is None else PoolSpec(Fraction(pool)),
            interp_mode=obj.get("interp", "linear"),
            tau_base=obj.get("tau_base"),
            kernel_size=obj.get("kernel_size", 3),
        )


@dataclass
class SensorStack:
    features: int
    blocks: list


@dataclass
class ModelSpec:
    """Declarative network description; JSON-serializable."""

    classes: int
    sensors: list = field(default_factory=list)
    merged: list = field(default_factory=list)
    kind: str = "stfnet"
    mlp_hidden: int = 64

    def __post_init__(self):
        if self.classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.classes}")
        if self.kind not in ("stfnet", "mlp"):
            raise ConfigError(f"unknown model kind {self.kind!r}")
        if self.kind == "stfnet" and not self.sensors:
            raise ConfigError("a spectral model needs at least one sensor stack")

    @property
    def total_features(self) -> int:
        return sum(s.features for s in self.sensors)

    def head_features(self) -> int:
        if self.merged:
            return self.merged[-1].out_features
        return sum(s.blocks[-1].out_features for s in self.sensors)

    def to_json(self) -> dict:
        if self.kind == "mlp":
            return {"kind": "mlp", "classes": self.classes, "hidden": self.mlp_hidden}
        return {
            "kind": "stfnet",
            "classes": self.classes,
            "sensors": [
                {"features": s.features, "blocks": [b.to_json() for b in s.blocks]}
                for s in self.sensors
            ],
            "merged": [b.to_json() for b in self.merged],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ModelSpec":
        kind = obj.get("kind", "stfnet")
        if kind == "mlp":
            return cls(classes=obj["classes"], kind="mlp", mlp_hidden=obj.get("hidden", 64))
        sensors = [
            SensorStack(
                features=s["features"],
                blocks=[BlockConfig.from_json(b) for b in s["blocks"]],
            )
            for s in obj["sensors"]
        ]
        merged = [BlockConfig.from_json(b) for b in obj.get("merged", [])]
        return cls(classes=obj["classes"], sensors=sensors, merged=merged)


def default_model_spec(
    classes: int,
    sensor_features,
    window_set=(16, 32, 64, 128),
    op_kind: str = "filter",
    width: int = 16,
    pool_rho: str = "1/2",
    interleave: bool = True,
    interp_mode: str = "linear",
) -> ModelSpec:
    """Three blocks per sensor, pooling on the third, three merged blocks."""
    ws = tuple(window_set)

    def block(pool=None):
        return BlockConfig(
            window_set=ws,
            op_kind=op_kind,
            out_features=width,
            interleave=interleave,
            pool=pool,
            interp_mode=interp_mode,
        )

    sensors = [
        SensorStack(
            features=f,
            blocks=[block(), block(), block(pool=PoolSpec(Fraction(pool_rho)))],
        )
        for f in sensor_features
    ]
    merged = [block(), block(), block()]
    return ModelSpec(classes=classes, sensors=sensors, merged=merged)


# --- parameters -----------------------------------------------------------------


def init_params(spec: ModelSpec, t_len: int, seed: int = 0) -> ag.ParamStore:
    """Fresh parameter store for ``spec`` applied to length-t_len signals."""
    rng = np.random.default_rng(seed)
    store = ag.ParamStore()
    if spec.kind == "mlp":
        d_in = t_len * spec.total_features if spec.sensors else t_len
        h = spec.mlp_hidden
        store.add("mlp.w1", rng.normal(0, 1 / math.sqrt(d_in), (d_in, h)), "real")
        store.add("mlp.b1", np.zeros(h), "real")
        store.add("mlp.w2", rng.normal(0, 1 / math.sqrt(h), (h, spec.classes)), "real")
        store.add("mlp.b2", np.zeros(spec.classes), "real")
        return store

    def add_block(scope: str, cfg: BlockConfig, d_in: int) -> int:
        o_res = cfg.features_per_resolution
        if cfg.interleave:
            for ratio in specops.interleave_ratios(cfg.window_set):
                store.add(f"{scope}.wm{ratio}", np.zeros((ratio, ratio)), "complex")
        if cfg.op_kind == "filter":
            fw = specops.init_filter_weights(
                rng, cfg.filter_tau_base, d_in, o_res, cfg.interp_mode
            )
            constraint = "real-dc-nyquist" if cfg.interp_mode == "spectral" else "none"
            store.add(f"{scope}.wf", fw.w.as_array(), "complex", constraint)
        else:
            cw = specops.init_conv_weights(
                rng, cfg.conv_tau_base, cfg.kernel_size, d_in, o_res
            )
            store.add(f"{scope}.wc", cw.w.as_array()[0], "complex")
        return cfg.out_features

    for si, sensor in enumerate(spec.sensors):
        d = sensor.features
        for bi, cfg in enumerate(sensor.blocks):
            d = add_block(f"s{si}.b{bi}", cfg, d)
    d = sum(s.blocks[-1].out_features for s in spec.sensors)
    for bi, cfg in enumerate(spec.merged):
        d = add_block(f"m.b{bi}", cfg, d)
    f = spec.head_features()
    store.add("head.w", rng.normal(0, 1 / math.sqrt(f), (f, spec.classes)), "real")
    store.add("head.b", np.zeros(spec.classes), "real")
    return store


# --- forward passes ---------------------------------------------------------------


def block_forward_tape(tape, x, cfg: BlockConfig, leaves: dict, scope: str):
    """Run one block on a (B, T, D) Var; returns a (B, T', O) Var."""
    ws = cfg.window_set
    if x.value.shape[1] % max(ws) != 0:
        raise ShapeError(
            f"block input length {x.value.shape[1]} not divisible by {max(ws)}"
        )
    reps = [ag.stft_batch(tape, x, tau) for tau in ws]
    if cfg.interleave:
        wm_vars = {
            ratio: leaves[f"{scope}.wm{ratio}"]
            for ratio in specops.interleave_ratios(ws)
        }
        reps = ag.interleave_tape(tape, reps, ws, wm_vars)
    outs = []
    for idx, tau in enumerate(ws):
        rv = reps[idx]
        if cfg.op_kind == "filter":
            wp = ag.resolve_filter_weights_tape(
                tape, leaves[f"{scope}.wf"], cfg.filter_tau_base, tau, cfg.interp_mode
            )
            y = ag.filter_apply(tape, rv, wp)
        else:
            k_bins = rv.value.shape[2]
            rate, pl, pr = specops.conv_geometry(
                k_bins, cfg.kernel_size, tau, cfg.conv_tau_base
            )
            zp = ag.spectral_pad_op(tape, rv, pl, pr)
            y = ag.conv_apply(tape, zp, leaves[f"{scope}.wc"], rate, k_bins)
        tau_out = tau
        if cfg.pool is not None:
            tau_out = cfg.pool.pooled_tau(tau)
            y = ag.pool_bins(tape, y, _kernels.half_bins(tau_out), float(cfg.pool.rho))
        outs.append(ag.istft_batch(tape, y, tau_out))
    cat = ag.concat(tape, outs, axis=-1)
    return ag.relu(tape, cat)


def model_forward_tape(tape, x, spec: ModelSpec, leaves: dict):
    """Full network on a (B, T, D_total) Var; returns (B, C) logits."""
    if spec.kind == "mlp":
        flat = ag.flatten_trailing(tape, x)
        h = ag.relu(tape, ag.affine(tape, flat, leaves["mlp.w1"], leaves["mlp.b1"]))
        return ag.affine(tape, h, leaves["mlp.w2"], leaves["mlp.b2"])
    if x.value.shape[2] != spec.total_features:
        raise ShapeError(
            f"batch has {x.value.shape[2]} features, sensors declare {spec.total_features}"
        )
    sensor_outs = []
    lo = 0
    for si, sensor in enumerate(spec.sensors):
        xs = ag.slice_features(tape, x, lo, lo + sensor.features)
        lo += sensor.features
        for bi, cfg in enumerate(sensor.blocks):
            xs = block_forward_tape(tape, xs, cfg, leaves, f"s{si}.b{bi}")
        sensor_outs.append(xs)
    lengths = {v.value.shape[1] for v in sensor_outs}
    if len(lengths) != 1:
        raise ShapeError(f"sensor stacks disagree on output length: {lengths}")
    h = sensor_outs[0] if len(sensor_outs) == 1 else ag.concat(tape, sensor_outs, axis=-1)
    for bi, cfg in enumerate(spec.merged):
        h = block_forward_tape(tape, h, cfg, leaves, f"m.b{bi}")
    pooled = ag.mean_axis(tape, h, axis=1)
    return ag.affine(tape, pooled, leaves["head.w"], leaves["head.b"])


def block_forward(x: np.ndarray, cfg: BlockConfig, store: ag.ParamStore, scope: str = "s0.b0") -> np.ndarray:
    """Single-sample block forward: (T, D) -> (T', O)."""
    tape = ag.Tape()
    xv = tape.leaf(np.asarray(x, dtype=np.float64)[None])
    out = block_forward_tape(tape, xv, cfg, store.leaf_vars(), scope)
    return out.value[0]


def model_forward(batch: np.ndarray, spec: ModelSpec, store: ag.ParamStore) -> np.ndarray:
    """Inference logits for a (B, T, D_total) batch."""
    tape = ag.Tape()
    xv = tape.leaf(np.asarray(batch, dtype=np.float64))
    return model_forward_tape(tape, xv, spec, store.leaf_vars()).value


# --- metrics ----------------------------------------------------------------------


def accuracy(pred: np.ndarray, truth: np.ndarray) -> float:
    return float(np.mean(pred == truth))


def macro_f1(pred: np.ndarray, truth: np.ndarray, classes: int) -> float:
    """Unweighted mean F1 over all classes (absent classes score 0)."""
    scores = []
    for c in range(classes):
        tp = float(np.sum((pred == c) & (truth == c)))
        fp = float(np.sum((pred == c) & (truth != c)))
        fn = float(np.sum((pred != c) & (truth == c)))
        denom = 2 * tp + fp + fn
        scores.append(2 * tp / denom if denom > 0 else 0.0)
    return float(np.mean(scores))


def mean_ci95(values) -> tuple:
    """Sample mean and half-width of the normal-approximation 95% CI."""
    vals = np.asarray(values, dtype=np.float64)
    if vals.size < 2:
        return float(vals.mean()) if vals.size else float("nan"), 0.0
    half = 1.96 * float(vals.std(ddof=1)) / math.sqrt(vals.size)
    return float(vals.mean()), half


# --- training ----------------------------------------------------------------------


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch: int = 32
    epochs: int = 20
    seed: int = 0
    stop_at_accuracy: Optional[float] = None

    @classmethod
    def from_json(cls, obj: dict) -> "TrainConfig":
        return cls(
            lr=obj.get("lr", 1e-3),
            batch=obj.get("batch", 32),
            epochs=obj.get("epochs", 20),
            seed=obj.get("seed", 0),
            stop_at_accuracy=obj.get("stop_at_accuracy"),
        )


@dataclass
class TrainResult:
    store: ag.ParamStore
    rows: list  # per-epoch dicts: epoch, split, loss, accuracy, macro_f1
    final: dict
    epochs_run: int
    best_val_accuracy: float


def _predict(spec, store, x, batch_size=128):
    preds = []
    losses = []
    for lo in range(0, x.shape[0], batch_size):
        logits = model_forward(x[lo : lo + batch_size], spec, store)
        preds.append(np.argmax(logits, axis=1))
    return np.concatenate(preds) if preds else np.zeros(0, dtype=int)


def _eval_split(spec, store, x, y, batch_size=128):
    n = x.shape[0]
    loss_sum = 0.0
    preds = np.zeros(n, dtype=int)
    for lo in range(0, n, batch_size):
        xb = x[lo : lo + batch_size]
        yb = y[lo : lo + batch_size]
        tape = ag.Tape()
        logits = model_forward_tape(tape, tape.leaf(xb), spec, store.leaf_vars())
        loss = ag.cross_entropy(tape, logits, yb)
        loss_sum += float(loss.value) * xb.shape[0]
        preds[lo : lo + xb.shape[0]] = np.argmax(logits.value, axis=1)
    return {
        "loss": loss_sum / max(n, 1),
        "accuracy": accuracy(preds, y),
        "macro_f1": macro_f1(preds, y, spec.classes),
    }


def run_training(
    spec: ModelSpec,
    train_x: np.ndarray,
    train_y: np.ndarray,
    val_x: np.ndarray,
    val_y: np.ndarray,
    tcfg: TrainConfig,
) -> TrainResult:
    """Mini-batch cross-entropy training with per-epoch train/val metrics.

    Deterministic for a fixed config and seed: shuffling, init, and all
    updates derive from a single seeded generator.
    """
    store = init_params(spec, train_x.shape[1], seed=tcfg.seed)
    opt = ag.Adam(store, lr=tcfg.lr)
    rng = np.random.default_rng(tcfg.seed + 1)
    rows = []
    best_val = 0.0
    epochs_run = 0
    for epoch in range(1, tcfg.epochs + 1):
        order = rng.permutation(train_x.shape[0])
        for lo in range(0, order.size, tcfg.batch):
            idx = order[lo : lo + tcfg.batch]
            tape = ag.Tape()
            leaves = store.leaf_vars()
            logits = model_forward_tape(tape, tape.leaf(train_x[idx]), spec, leaves)
            loss = ag.cross_entropy(tape, logits, train_y[idx])
            grads = ag.param_grads(ag.backward(tape, loss), leaves, store)
            opt.step(grads)
        epochs_run = epoch
        train_metrics = _eval_split(spec, store, train_x, train_y)
        val_metrics = _eval_split(spec, store, val_x, val_y)
        for split, metrics in (("train", train_metrics), ("val", val_metrics)):
            rows.append({"epoch": epoch, "split": split, **metrics})
        best_val = max(best_val, val_metrics["accuracy"])
        if tcfg.stop_at_accuracy is not None and val_metrics["accuracy"] >= tcfg.stop_at_accuracy:
            break
    final = {
        "train": train_metrics,
        "val": val_metrics,
        "epochs_run": epochs_run,
        "best_val_accuracy": best_val,
    }
    return TrainResult(store, rows, final, epochs_run, best_val)


def train_holdout(spec, ds: Dataset, tcfg: TrainConfig, test_fraction=0.2, normalize=False):
    """Stratified holdout split, then standard training."""
    tr_idx, te_idx = data_mod.split_holdout(ds, test_fraction, tcfg.seed)
    train_x, train_y = ds.x[tr_idx], ds.y[tr_idx]
    val_x, val_y = ds.x[te_idx], ds.y[te_idx]
    if normalize:
        train_x, stats = data_mod.normalize_arrays(train_x)
        val_x = data_mod.apply_normalization(val_x, stats)
    result = run_training(spec, train_x, train_y, val_x, val_y, tcfg)
    metrics = {
        "mode": "holdout",
        "train_size": int(tr_idx.size),
        "test_size": int(te_idx.size),
        "final": result.final,
    }
    return result, metrics


def _logo_fold(spec, ds: Dataset, tcfg: TrainConfig, group: int, normalize: bool):
    mask = ds.groups == group
    train_x, train_y = ds.x[~mask], ds.y[~mask]
    val_x, val_y = ds.x[mask], ds.y[mask]
    if normalize:
        train_x, stats = data_mod.normalize_arrays(train_x)
        val_x = data_mod.apply_normalization(val_x, stats)
    result = run_training(spec, train_x, train_y, val_x, val_y, tcfg)
    fold = {
        "group": int(group),
        "accuracy": result.final["val"]["accuracy"],
        "macro_f1": result.final["val"]["macro_f1"],
        "loss": result.final["val"]["loss"],
    }
    return result, fold


def train_leave_one_group_out(spec, ds: Dataset, tcfg: TrainConfig, normalize=False, jobs=1):
    """One fold per group; aggregates mean and 95% CI half-width."""
    groups = sorted(int(g) for g in np.unique(ds.groups))
    if not groups:
        raise ConfigError("dataset has no groups")
    results = []
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [
                pool.submit(_logo_fold, spec, ds, tcfg, g, normalize) for g in groups
            ]
            results = [f.result() for f in futures]
    else:
        results = [_logo_fold(spec, ds, tcfg, g, normalize) for g in groups]
    folds = [fold for _, fold in results]
    acc_mean, acc_ci = mean_ci95([f["accuracy"] for f in folds])
    f1_mean, f1_ci = mean_ci95([f["macro_f1"] for f in folds])
    metrics = {
        "mode": "leave-one-group-out",
        "folds": folds,
        "accuracy": {"mean": acc_mean, "ci95": acc_ci},
        "macro_f1": {"mean": f1_mean, "ci95": f1_ci},
    }
    rows = []
    for result, _ in results:
        rows.extend(result.rows)
    last_result = results[-1][0]
    return last_result, metrics, rows
