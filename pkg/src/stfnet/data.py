"""Synthetic dataset generation, CSV ingestion, and normalization.

The generators isolate the phenomena multi-resolution spectral models
target: :func:`gen_toneband` separates classes purely by frequency,
:func:`gen_transient` purely by the sub-window timing of identical
bursts (global magnitude spectra match across classes by construction),
and :func:`gen_mixedres` mixes both so no single window width suffices.
Every generator verifies its own separability oracle before returning.
"""

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import ConfigError, DomainError, ParseError
from .numeric import read_tensor, write_tensor, write_text_atomic


@dataclass
class Dataset:
    """(N, T, D) samples with integer labels and fold groups."""

    x: np.ndarray
    y: np.ndarray
    groups: np.ndarray
    fs: float
    class_names: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        self.groups = np.asarray(self.groups, dtype=np.int64)
        if self.x.ndim != 3:
            raise ConfigError(f"samples must be (N, T, D), got {self.x.shape}")
        if self.y.shape != (self.x.shape[0],) or self.groups.shape != self.y.shape:
            raise ConfigError("labels/groups must be one per sample")
        if not self.class_names:
            self.class_names = [f"class{i}" for i in range(self.classes)]
        if self.y.size and (self.y.min() < 0 or self.y.max() >= len(self.class_names)):
            raise ConfigError("labels out of range")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def t_len(self) -> int:
        return self.x.shape[1]

    @property
    def features(self) -> int:
        return self.x.shape[2]

    @property
    def classes(self) -> int:
        return len(self.class_names) if self.class_names else int(self.y.max()) + 1

    def save(self, directory: str) -> None:
        os.makedirs(directory, exist_ok=True)
        write_tensor(os.path.join(directory, "data.bin"), self.x)
        write_tensor(os.path.join(directory, "labels.bin"), self.y.astype(np.float64))
        write_tensor(os.path.join(directory, "groups.bin"), self.groups.astype(np.float64))
        meta = {
            "fs": self.fs,
            "T": self.t_len,
            "D": self.features,
            "C": self.classes,
            "class_names": self.class_names,
        }
        meta.update(self.meta)
        write_text_atomic(
            os.path.join(directory, "meta.json"), json.dumps(meta, sort_keys=True)
        )

    @classmethod
    def load(cls, directory: str) -> "Dataset":
        try:
            with open(os.path.join(directory, "meta.json")) as fh:
                meta = json.load(fh)
        except FileNotFoundError as exc:
            raise ParseError(f"{directory}: missing meta.json") from exc
        except json.JSONDecodeError as exc:
            raise ParseError(f"{directory}: bad meta.json: {exc}") from exc
        x = read_tensor(os.path.join(directory, "data.bin"))
        y = read_tensor(os.path.join(directory, "labels.bin")).astype(np.int64)
        groups = read_tensor(os.path.join(directory, "groups.bin")).astype(np.int64)
        extra = {
            k: v for k, v in meta.items() if k not in ("fs", "T", "D", "C", "class_names")
        }
        return cls(x, y, groups, meta["fs"], meta.get("class_names", []), extra)


# --- synthetic generators -----------------------------------------------------


def toneband_bins(classes: int, grid_tau: int) -> list:
    """Distinct class frequencies as bins of the grid_tau-point spectrum."""
    k_max = grid_tau // 2
    bins = [round((c + 1) * k_max / (classes + 1)) for c in range(classes)]
    if len(set(bins)) != classes or min(bins) < 1 or max(bins) >= k_max:
        raise ConfigError(
            f"cannot place {classes} distinct tone bins on a {grid_tau}-point grid"
        )
    return bins


def _noise_sigma(signal_power: float, snr_db) -> float:
    if snr_db is None or snr_db == float("inf"):
        return 0.0
    return float(np.sqrt(signal_power / (10.0 ** (snr_db / 10.0))))


def _spectral_peak_bins(x: np.ndarray, grid_tau: int) -> np.ndarray:
    """Dominant non-DC bin of the chunk-averaged grid_tau spectrum, per sample."""
    n, t_len, d = x.shape
    rows = x.transpose(0, 2, 1).reshape(n * d, t_len // grid_tau, grid_tau)
    spec = _kernels.rfft_rows(rows.reshape(-1, grid_tau))
    mag = np.abs(spec).reshape(n, -1, spec.shape[1]).mean(axis=1)
    return np.argmax(mag[:, 1:], axis=1) + 1


def gen_toneband(
    n_per_class: int,
    classes: int,
    t_len: int = 512,
    features: int = 1,
    fs: float = 100.0,
    snr_db=10.0,
    seed: int = 0,
    grid_tau: int = 128,
    n_groups: int = 5,
) -> Dataset:
    """Classes are pure tones at distinct grid frequencies plus white noise."""
    if t_len % grid_tau != 0:
        raise ConfigError(f"t_len={t_len} must be a multiple of grid_tau={grid_tau}")
    bins = toneband_bins(classes, grid_tau)
    rng = np.random.default_rng(seed)
    sigma = _noise_sigma(0.5, snr_db)
    n = n_per_class * classes
    t = np.arange(t_len)
    x = np.empty((n, t_len, features))
    y = np.repeat(np.arange(classes), n_per_class)
    for i in range(n):
        freq = bins[y[i]] * fs / grid_tau
        phase = rng.uniform(0, 2 * np.pi, size=features)
        tone = np.cos(2 * np.pi * freq * t[:, None] / fs + phase[None, :])
        x[i] = tone + rng.normal(0, sigma, size=(t_len, features))
    groups = np.arange(n) % n_groups
    ds = Dataset(x, y, groups, fs, [f"tone_k{b}" for b in bins], {"tone_bins": bins})
    class_peak = np.zeros(classes, dtype=int)
    for c in range(classes):
        class_peak[c] = int(
            np.bincount(_spectral_peak_bins(x[y == c], grid_tau)).argmax()
        )
    if not all(class_peak[c] == bins[c] for c in range(classes)):
        raise DomainError("tone dataset failed its spectral-peak oracle")
    return ds


def transient_patterns(classes: int, n_slots: int, active: int) -> list:
    """Circularly shifted slot patterns: identical content, shifted timing."""
    if classes > n_slots:
        raise ConfigError(f"cannot place {classes} shifted patterns in {n_slots} slots")
    stride = n_slots // active
    base = [i * stride for i in range(active)]
    patterns = [sorted((s + c) % n_slots for s in base) for c in range(classes)]
    if len({tuple(p) for p in patterns}) != classes:
        raise ConfigError("transient patterns collide; reduce classes or add slots")
    return patterns


def _chunk_energy(x: np.ndarray, chunk: int) -> np.ndarray:
    """(N, slots) total energy per length-``chunk`` window, summed over features."""
    n, t_len, d = x.shape
    return (x.reshape(n, t_len // chunk, chunk, d) ** 2).sum(axis=(2, 3))


def gen_transient(
    n_per_class: int,
    classes: int,
    t_len: int = 512,
    features: int = 1,
    fs: float = 100.0,
    snr_db=20.0,
    seed: int = 0,
    burst_len: int = 32,
    n_groups: int = 5,
) -> Dataset:
    """Classes share one carrier and differ only in burst timing.

    Patterns are circular shifts of one slot layout, so noiseless class
    signals are circular shifts of each other and their whole-signal
    magnitude spectra coincide; only fine time resolution separates them.
    """
    if t_len % burst_len != 0:
        raise ConfigError(f"t_len={t_len} must be a multiple of burst_len={burst_len}")
    n_slots = t_len // burst_len
    active = max(1, n_slots // 4)
    patterns = transient_patterns(classes, n_slots, active)
    carrier_bin = burst_len // 4
    rng = np.random.default_rng(seed)
    duty = active / n_slots
    sigma = _noise_sigma(0.5 * duty, snr_db)
    n = n_per_class * classes
    x = np.zeros((n, t_len, features))
    y = np.repeat(np.arange(classes), n_per_class)
    t_burst = np.arange(burst_len)
    for i in range(n):
        for slot in patterns[y[i]]:
            phase = rng.uniform(0, 2 * np.pi, size=features)
            seg = np.cos(
                2 * np.pi * carrier_bin * t_burst[:, None] / burst_len + phase[None, :]
            )
            x[i, slot * burst_len : (slot + 1) * burst_len] = seg
        x[i] += rng.normal(0, sigma, size=(t_len, features))
    groups = np.arange(n) % n_groups
    ds = Dataset(
        x,
        y,
        groups,
        fs,
        [f"burst_shift{c}" for c in range(classes)],
        {"burst_len": burst_len, "patterns": patterns},
    )
    _verify_timing(ds, patterns, burst_len)
    return ds


def _verify_timing(ds: Dataset, patterns, burst_len: int) -> None:
    energy = _chunk_energy(ds.x, burst_len)
    n_slots = energy.shape[1]
    templates = np.zeros((len(patterns), n_slots))
    for c, pattern in enumerate(patterns):
        templates[c, pattern] = 1.0
    centered = energy - energy.mean(axis=1, keepdims=True)
    t_centered = templates - templates.mean(axis=1, keepdims=True)
    scores = centered @ t_centered.T
    if not np.array_equal(np.argmax(scores, axis=1), ds.y):
        raise DomainError("transient dataset failed its chunk-energy oracle")


def gen_mixedres(
    n_per_class: int,
    classes: int = 4,
    t_len: int = 512,
    features: int = 1,
    fs: float = 100.0,
    snr_db=10.0,
    seed: int = 0,
    grid_tau: int = 128,
    burst_len: int = 32,
    n_groups: int = 5,
) -> Dataset:
    """Half the classes are adjacent fine-grid tones, half shifted bursts.

    Tone classes sit one fine-grid bin apart (unresolvable on coarse
    grids); timing classes place one burst per coarse chunk at shifted
    sub-chunk slots (identical coarse chunk energies). No single
    time-frequency resolution separates all classes.
    """
    if classes < 2:
        raise ConfigError("mixed-resolution task needs at least 2 classes")
    if t_len % grid_tau != 0 or t_len % burst_len != 0:
        raise ConfigError("t_len must be a multiple of grid_tau and burst_len")
    n_tone = (classes + 1) // 2
    n_timing = classes - n_tone
    rng = np.random.default_rng(seed)
    k_center = grid_tau // 4
    tone_bins = [k_center + c for c in range(n_tone)]
    slots_per_chunk = max(1, grid_tau // burst_len)
    n_slots = t_len // burst_len
    patterns = [
        sorted((chunk * slots_per_chunk + c) % n_slots
               for chunk in range(t_len // max(grid_tau, burst_len)))
        for c in range(n_timing)
    ]
    carrier_bin = burst_len // 4
    sigma_tone = _noise_sigma(0.5, snr_db)
    n = n_per_class * classes
    x = np.zeros((n, t_len, features))
    y = np.repeat(np.arange(classes), n_per_class)
    t = np.arange(t_len)
    t_burst = np.arange(burst_len)
    for i in range(n):
        c = y[i]
        if c < n_tone:
            freq = tone_bins[c] * fs / grid_tau
            phase = rng.uniform(0, 2 * np.pi, size=features)
            x[i] = np.cos(2 * np.pi * freq * t[:, None] / fs + phase[None, :])
            x[i] += rng.normal(0, sigma_tone, size=(t_len, features))
        else:
            for slot in patterns[c - n_tone]:
                phase = rng.uniform(0, 2 * np.pi, size=features)
                x[i, slot * burst_len : (slot + 1) * burst_len] = np.cos(
                    2 * np.pi * carrier_bin * t_burst[:, None] / burst_len
                    + phase[None, :]
                )
            duty = len(patterns[c - n_tone]) * burst_len / t_len
            x[i] += rng.normal(0, _noise_sigma(0.5 * duty, snr_db), (t_len, features))
    groups = np.arange(n) % n_groups
    names = [f"tone_k{b}" for b in tone_bins] + [
        f"burst_shift{c}" for c in range(n_timing)
    ]
    ds = Dataset(
        x, y, groups, fs, names,
        {"tone_bins": tone_bins, "patterns": patterns, "burst_len": burst_len},
    )
    _verify_mixed(ds, tone_bins, patterns, grid_tau, burst_len)
    return ds


def _verify_mixed(ds, tone_bins, patterns, grid_tau, burst_len) -> None:
    n_tone = len(tone_bins)
    tone_mask = ds.y < n_tone
    if tone_mask.any():
        peaks = _spectral_peak_bins(ds.x[tone_mask], grid_tau)
        expected = np.array([tone_bins[c] for c in ds.y[tone_mask]])
        per_class_ok = True
        for c in range(n_tone):
            sel = ds.y[tone_mask] == c
            if sel.any():
                mode = np.bincount(peaks[sel]).argmax()
                per_class_ok &= int(mode) == tone_bins[c]
        if not per_class_ok:
            raise DomainError("mixed dataset failed its tone oracle")
        del expected
    if (~tone_mask).any() and patterns:
        timing = Dataset(
            ds.x[~tone_mask],
            ds.y[~tone_mask] - n_tone,
            ds.groups[~tone_mask],
            ds.fs,
            [f"c{i}" for i in range(len(patterns))],
        )
        _verify_timing(timing, patterns, burst_len)
    counts = np.bincount(ds.y, minlength=ds.classes)
    if len(set(counts.tolist())) != 1:
        raise DomainError("mixed dataset classes are unbalanced")


# --- CSV ingestion --------------------------------------------------------------


def ingest_csv(
    path: str,
    fs: float,
    seg_len: int,
    feature_cols,
    label_col: str,
    group_col=None,
    timestamp_col: str = "timestamp",
) -> Dataset:
    """Interpolate irregular readings to a uniform rate and segment them.

    Rows must carry a monotonically increasing timestamp per group.
    Windows never overlap, never cross group boundaries, and windows
    spanning a label change are dropped; survivors take their single label.
    """
    feature_cols = list(feature_cols)
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ParseError(f"{path}: empty file")
        needed = [timestamp_col, label_col] + feature_cols
        if group_col:
            needed.append(group_col)
        missing = [c for c in needed if c not in reader.fieldnames]
        if missing:
            raise ConfigError(f"{path}: missing columns {missing}")
        for lineno, row in enumerate(reader, start=2):
            try:
                ts = float(row[timestamp_col])
                feats = [float(row[c]) for c in feature_cols]
            except (TypeError, ValueError) as exc:
                raise ParseError(f"{path}:{lineno}: bad numeric value") from exc
            label = row[label_col]
            group = row[group_col] if group_col else "0"
            rows.append((group, ts, feats, label, lineno))
    if not rows:
        raise ParseError(f"{path}: no data rows")

    label_names = sorted({r[3] for r in rows})
    label_ids = {name: i for i, name in enumerate(label_names)}
    group_names = sorted({r[0] for r in rows})
    group_ids = {name: i for i, name in enumerate(group_names)}

    segments = []
    seg_labels = []
    seg_groups = []
    for gname in group_names:
        grows = [r for r in rows if r[0] == gname]
        ts = np.array([r[1] for r in grows])
        if np.any(np.diff(ts) <= 0):
            bad = int(np.nonzero(np.diff(ts) <= 0)[0][0])
            raise ParseError(
                f"{path}:{grows[bad + 1][4]}: timestamps not strictly increasing"
            )
        feats = np.array([r[2] for r in grows])
        labels = np.array([label_ids[r[3]] for r in grows])
        grid = ts[0] + np.arange(int(np.floor((ts[-1] - ts[0]) * fs)) + 1) / fs
        uniform = np.column_stack([np.interp(grid, ts, feats[:, j]) for j in range(feats.shape[1])])
        nearest = np.clip(np.searchsorted(ts, grid, side="right") - 1, 0, ts.size - 1)
        grid_labels = labels[nearest]
        for lo in range(0, uniform.shape[0] - seg_len + 1, seg_len):
            window_labels = grid_labels[lo : lo + seg_len]
            if np.all(window_labels == window_labels[0]):
                segments.append(uniform[lo : lo + seg_len])
                seg_labels.append(int(window_labels[0]))
                seg_groups.append(group_ids[gname])
    if not segments:
        raise ParseError(f"{path}: no complete single-label windows of {seg_len} samples")
    return Dataset(
        np.stack(segments),
        np.array(seg_labels),
        np.array(seg_groups),
        fs,
        label_names,
        {"source": os.path.basename(path), "groups": group_names},
    )


# --- normalization ----------------------------------------------------------------


NORM_EPS = 1e-12


def normalize_arrays(x: np.ndarray):
    """Per-feature z-score over all samples and time; returns (x', stats)."""
    mean = x.mean(axis=(0, 1))
    std = x.std(axis=(0, 1))
    out = (x - mean) / np.maximum(std, NORM_EPS)
    stats = {"mean": mean.tolist(), "std": std.tolist()}
    return out, stats


def apply_normalization(x: np.ndarray, stats: dict) -> np.ndarray:
    mean = np.asarray(stats["mean"], dtype=np.float64)
    std = np.asarray(stats["std"], dtype=np.float64)
    return (x - mean) / np.maximum(std, NORM_EPS)


def normalize(ds: Dataset, mode: str = "zscore-per-feature"):
    """Normalized copy of a dataset plus the JSON-serializable statistics."""
    if mode != "zscore-per-feature":
        raise ConfigError(f"unknown normalization mode {mode!r}")
    out, stats = normalize_arrays(ds.x)
    return (
        Dataset(out, ds.y.copy(), ds.groups.copy(), ds.fs, list(ds.class_names), dict(ds.meta)),
        stats,
    )


# --- splits -------------------------------------------------------------------------


def split_holdout(ds: Dataset, test_fraction: float, seed: int):
    """Stratified split; returns (train_idx, test_idx)."""
    if not 0 < test_fraction < 1:
        raise ConfigError(f"test_fraction must be in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(seed)
    train_idx = []
    test_idx = []
    for c in np.unique(ds.y):
        members = np.nonzero(ds.y == c)[0]
        members = members[rng.permutation(members.size)]
        n_test = max(1, int(round(members.size * test_fraction)))
        test_idx.append(members[:n_test])
        train_idx.append(members[n_test:])
    return np.sort(np.concatenate(train_idx)), np.sort(np.concatenate(test_idx))


GENERATORS = {
    "toneband": gen_toneband,
    "transient": gen_transient,
    "mixedres": gen_mixedres,
}


def generate_from_config(cfg: dict) -> Dataset:
    """Build a dataset from a config's generator section."""
    kind = cfg.get("kind")
    if kind not in GENERATORS:
        raise ConfigError(f"unknown generator kind {kind!r}")
    kwargs = {k: v for k, v in cfg.items() if k != "kind"}
    if "snr_db" in kwargs and kwargs["snr_db"] is None:
        kwargs["snr_db"] = float("inf")
    return GENERATORS[kind](**kwargs)
