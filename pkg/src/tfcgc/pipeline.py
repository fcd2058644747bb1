"""End-to-end orchestration: data ingestion, preprocessing, synthetic
fixtures, per-crop causality imaging, boosted training, and run reports.

The standard pipeline band-limits whole trials, slides 2 s crops over
them, computes all 20 directed causality maps among the five electrodes
per crop, folds them into causality images, boosts the convolutional
base learner on the training split, and majority-votes crop predictions
on the test split. Every unit of parallel work derives its seed from the
master seed and its unit id, so results are independent of scheduling.
"""

from __future__ import annotations

import dataclasses
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import butter, filtfilt

from . import boosting, convnet, gridio
from .causality import CgcConfig, pairwise_maps
from .identify import RofrConfig
from .images import (
    ELECTRODE_ORDER,
    CausalityImage,
    assemble_image,
    crop_trial,
    electrode_representation,
    export_image,
)

LABEL_CODES = {"left": 1, "right": -1}


class DataError(ValueError):
    """Malformed manifests, trial files, or configuration data."""


class InstabilityError(ValueError):
    """A synthetic generator would be unstable at some time point."""


@dataclass
class Trial:
    data: np.ndarray  # (channels, samples)
    label: int  # +1 = left, -1 = right
    trial_id: str
    split: str = "train"


@dataclass
class TrialSet:
    trials: list[Trial]
    channel_names: tuple[str, ...]
    sampling_rate: float
    metadata: dict = field(default_factory=dict)

    def subset(self, split: str) -> "TrialSet":
        return TrialSet(
            [t for t in self.trials if t.split == split],
            self.channel_names,
            self.sampling_rate,
            self.metadata,
        )

    def __len__(self) -> int:
        return len(self.trials)


@dataclass(frozen=True)
class RunConfig:
    """Everything a full run needs, with full-scale analysis defaults."""

    manifest: str | None = None
    band: tuple[float, float] = (6.0, 15.0)
    electrodes: tuple[str, ...] = ELECTRODE_ORDER
    crop_seconds: float = 2.0
    stride_seconds: float = 0.5
    orders: tuple[int, ...] = (3, 4, 5)
    scale: int = 3
    lags: int = 3
    forgetting: float = 0.02
    init_window: int = 50
    regularization: float | None = None
    time_decimation: int = 1
    temporal_kernel: int = 15
    first_block_filters: int = 10
    block_count: int = 2
    batch_size: int = 16
    max_epochs: int = 60
    early_stop_patience: int = 15
    chi: int = 5
    seed: int = 0
    threads: int = 1
    out_dir: str | None = None
    export_graymaps: bool = False

    def cgc_config(self) -> CgcConfig:
        return CgcConfig(
            orders=self.orders,
            scale=self.scale,
            lags=self.lags,
            rofr=RofrConfig(regularization=self.regularization),
            forgetting=self.forgetting,
            init_window=self.init_window,
            time_decimation=self.time_decimation,
        )

    def convnet_config(self, seed: int = 0) -> convnet.ConvNetConfig:
        return convnet.ConvNetConfig(
            temporal_kernel=self.temporal_kernel,
            first_block_filters=self.first_block_filters,
            block_count=self.block_count,
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            early_stop_patience=self.early_stop_patience,
            seed=seed,
        )


def load_trials(manifest_path) -> TrialSet:
    """Read the CSV manifest and every referenced trial file.

    The manifest starts with a ``# fs: <Hz>`` sidecar line, then a
    header ``trial_file,label,split``. Each trial file is a CSV of
    samples (rows) by channels (cols) with a channel-name header.
    """
    manifest_path = str(manifest_path)
    base = os.path.dirname(manifest_path)
    try:
        with open(manifest_path, encoding="ascii") as fh:
            lines = [ln.strip() for ln in fh if ln.strip()]
    except OSError as exc:
        raise DataError(f"cannot read manifest: {exc}") from exc
    if not lines or not lines[0].startswith("#"):
        raise DataError(f"{manifest_path}:1: missing '# fs: <Hz>' sidecar line")
    sidecar = lines[0].lstrip("#").strip()
    if not sidecar.startswith("fs:"):
        raise DataError(f"{manifest_path}:1: sidecar must declare 'fs: <Hz>'")
    try:
        fs = float(sidecar.partition(":")[2])
    except ValueError as exc:
        raise DataError(f"{manifest_path}:1: bad sampling rate") from exc
    if len(lines) < 2 or lines[1] != "trial_file,label,split":
        raise DataError(
            f"{manifest_path}:2: header must be 'trial_file,label,split'"
        )
    if len(lines) == 2:
        raise DataError(f"{manifest_path}: manifest lists no trials")
    trials = []
    channel_names = None
    for lineno, line in enumerate(lines[2:], start=3):
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 3:
            raise DataError(f"{manifest_path}:{lineno}: expected 3 columns")
        fname, label, split = parts
        if label not in LABEL_CODES:
            raise DataError(
                f"{manifest_path}:{lineno}: label must be left or right"
            )
        if split not in ("train", "test"):
            raise DataError(
                f"{manifest_path}:{lineno}: split must be train or test"
            )
        path = os.path.join(base, fname)
        data, names = _load_trial_csv(path)
        if channel_names is None:
            channel_names = names
        elif names != channel_names:
            raise DataError(f"{path}: channel header differs from first trial")
        trials.append(
            Trial(data, LABEL_CODES[label], os.path.splitext(fname)[0], split)
        )
    return TrialSet(trials, channel_names, fs)


def _load_trial_csv(path):
    try:
        with open(path, encoding="ascii") as fh:
            header = fh.readline().strip()
            names = tuple(h.strip() for h in header.split(","))
            rows = []
            for lineno, line in enumerate(fh, start=2):
                if not line.strip():
                    continue
                cells = line.strip().split(",")
                if len(cells) != len(names):
                    raise DataError(
                        f"{path}:{lineno}: expected {len(names)} columns"
                    )
                try:
                    rows.append([float(c) for c in cells])
                except ValueError as exc:
                    raise DataError(
                        f"{path}:{lineno}: non-numeric cell"
                    ) from exc
    except OSError as exc:
        raise DataError(f"missing trial file: {path}") from exc
    if not rows:
        raise DataError(f"{path}: no samples")
    return np.array(rows).T, names


def save_trials(trial_set: TrialSet, directory) -> str:
    """Write a TrialSet as manifest + per-trial CSV files; returns manifest."""
    directory = str(directory)
    os.makedirs(directory, exist_ok=True)
    inv = {v: k for k, v in LABEL_CODES.items()}
    lines = [f"# fs: {trial_set.sampling_rate:g}", "trial_file,label,split"]
    for trial in trial_set.trials:
        fname = f"{trial.trial_id}.csv"
        header = ",".join(trial_set.channel_names)
        body = "\n".join(
            ",".join(repr(float(v)) for v in row) for row in trial.data.T
        )
        gridio.atomic_write(
            os.path.join(directory, fname), (header + "\n" + body + "\n").encode()
        )
        lines.append(f"{fname},{inv[trial.label]},{trial.split}")
    manifest = os.path.join(directory, "manifest.csv")
    gridio.atomic_write(manifest, ("\n".join(lines) + "\n").encode())
    return manifest


def bandpass(trial_set: TrialSet, low: float, high: float) -> TrialSet:
    """Zero-phase band-pass: a 4th-order recursive filter applied
    forward and backward (effective order 8, zero group delay)."""
    fs = trial_set.sampling_rate
    if not 0 < low < high < fs / 2:
        raise DataError(f"band [{low}, {high}] invalid for fs={fs}")
    b, a = butter(4, [low, high], btype="bandpass", fs=fs)
    filtered = [
        Trial(filtfilt(b, a, t.data, axis=-1), t.label, t.trial_id, t.split)
        for t in trial_set.trials
    ]
    return TrialSet(
        filtered, trial_set.channel_names, fs, dict(trial_set.metadata)
    )


@dataclass(frozen=True)
class SynthSpec:
    """Two-class coupled generator on the five standard channels.

    The "left" class couples C4 into C3 inside the window; the "right"
    class couples C3 into C4. Every channel carries a resonant AR(2)
    rhythm near ``oscillation_freq`` so the coupling lives inside the
    analysis band.
    """

    channel_names: tuple[str, ...] = ELECTRODE_ORDER
    sampling_rate: float = 250.0
    trial_seconds: float = 4.0
    trials_per_class: int = 30
    coupling: float = 0.5
    window: tuple[float, float] = (0.25, 0.75)
    oscillation_freq: float = 10.0
    pole_radius: float = 0.9
    noise_scale: float = 1.0
    split: str = "train"

    def schedules(self, label: int) -> dict:
        src, dst = ("C4", "C3") if label == 1 else ("C3", "C4")
        return {(src, dst): (self.coupling, self.window)}


def _check_stability(spec: SynthSpec) -> None:
    """Reject generators whose companion matrix leaves the unit disc."""
    n_ch = len(spec.channel_names)
    omega = 2 * np.pi * spec.oscillation_freq / spec.sampling_rate
    a1 = 2 * spec.pole_radius * np.cos(omega)
    a2 = -spec.pole_radius**2
    index = {name: i for i, name in enumerate(spec.channel_names)}
    for label in (1, -1):
        for coupled in (False, True):
            lag1 = np.diag(np.full(n_ch, a1))
            lag2 = np.diag(np.full(n_ch, a2))
            if coupled:
                for (src, dst), (strength, _) in spec.schedules(label).items():
                    lag1[index[dst], index[src]] = strength
            top = np.hstack([lag1, lag2])
            bottom = np.hstack([np.eye(n_ch), np.zeros((n_ch, n_ch))])
            companion = np.vstack([top, bottom])
            radius = np.max(np.abs(np.linalg.eigvals(companion)))
            if radius >= 1.0:
                raise InstabilityError(
                    f"generator spectral radius {radius:.4f} >= 1 "
                    f"(label {label}, coupling {'on' if coupled else 'off'})"
                )


def synth_generate(spec: SynthSpec, seed: int = 0) -> TrialSet:
    """Seeded two-class fixture with ground-truth schedules attached."""
    _check_stability(spec)
    n = int(round(spec.sampling_rate * spec.trial_seconds))
    n_ch = len(spec.channel_names)
    index = {name: i for i, name in enumerate(spec.channel_names)}
    omega = 2 * np.pi * spec.oscillation_freq / spec.sampling_rate
    a1 = 2 * spec.pole_radius * np.cos(omega)
    a2 = -spec.pole_radius**2
    trials = []
    truth = {}
    for label in (1, -1):
        schedules = spec.schedules(label)
        lo = int(spec.window[0] * n)
        hi = int(spec.window[1] * n)
        for k in range(spec.trials_per_class):
            name = "left" if label == 1 else "right"
            trial_id = f"{spec.split}_{name}_{k:03d}"
            seed_seq = np.random.SeedSequence(
                [seed, 0 if label == 1 else 1, k]
            )
            rng = np.random.default_rng(seed_seq)
            e = spec.noise_scale * rng.standard_normal((n_ch, n))
            x = np.zeros((n_ch, n))
            for t in range(2, n):
                x[:, t] = a1 * x[:, t - 1] + a2 * x[:, t - 2] + e[:, t]
                if lo <= t < hi:
                    for (src, dst), (strength, _) in schedules.items():
                        x[index[dst], t] += strength * x[index[src], t - 1]
            trials.append(Trial(x, label, trial_id, spec.split))
            truth[trial_id] = {
                f"{src}->{dst}": [strength, lo, hi]
                for (src, dst), (strength, _) in schedules.items()
            }
    return TrialSet(
        trials,
        spec.channel_names,
        spec.sampling_rate,
        {"ground_truth": truth, "generator": dataclasses.asdict(spec)},
    )


def _crop_image_unit(args):
    """One (trial crop -> causality image) unit; pure and picklable."""
    crop_data, electrodes, fs, cgc_config = args
    indices = list(range(len(electrodes)))
    maps = pairwise_maps(crop_data, indices, fs, cgc_config)
    named = {
        (electrodes[s], electrodes[k]): m.values for (s, k), m in maps.items()
    }
    reps = {e: electrode_representation(named, e) for e in electrodes}
    return assemble_image(reps, electrodes).values


def trial_images(
    trial_set: TrialSet, config: RunConfig
) -> tuple[np.ndarray, np.ndarray, list[str], list[list[int]]]:
    """Causality images for every crop of every trial.

    Returns (images, crop_labels, trial_ids, crops_per_trial) where
    ``crops_per_trial[i]`` indexes the rows of ``images`` belonging to
    trial i, in crop order.
    """
    electrodes = list(config.electrodes)
    missing = [e for e in electrodes if e not in trial_set.channel_names]
    if missing:
        raise DataError(f"channels missing from data: {missing}")
    sel = [trial_set.channel_names.index(e) for e in electrodes]
    fs = trial_set.sampling_rate
    cgc = config.cgc_config()
    units = []
    owners = []
    for i, trial in enumerate(trial_set.trials):
        crops = crop_trial(
            trial.data,
            fs,
            config.crop_seconds,
            config.stride_seconds,
            trial.trial_id,
            trial.label,
        )
        for crop in crops:
            units.append((crop.extract(trial.data)[sel], electrodes, fs, cgc))
            owners.append(i)
    if config.threads > 1:
        with ProcessPoolExecutor(max_workers=config.threads) as pool:
            results = list(pool.map(_crop_image_unit, units, chunksize=1))
    else:
        results = [_crop_image_unit(u) for u in units]
    images = np.stack(results)
    labels = np.array([trial_set.trials[i].label for i in owners])
    groups: list[list[int]] = [[] for _ in trial_set.trials]
    for row, owner in enumerate(owners):
        groups[owner].append(row)
    ids = [t.trial_id for t in trial_set.trials]
    return images, labels, ids, groups


def run_pipeline(config: RunConfig, trial_set: TrialSet | None = None) -> dict:
    """Execute the full decode and return the run report as a dict.

    Stages: load, band-pass, crop, causality imaging, boosted training
    on the train split, majority-vote prediction on the test split.
    Artifacts (config snapshot, images, ensemble, report) are written to
    ``config.out_dir`` when one is set.
    """
    if trial_set is None:
        if config.manifest is None:
            raise DataError("need a manifest path or an in-memory trial set")
        trial_set = load_trials(config.manifest)
    filtered = bandpass(trial_set, *config.band)
    train_set = filtered.subset("train")
    test_set = filtered.subset("test")
    if len(train_set) == 0:
        raise DataError("training split is empty")

    tr_images, tr_labels, _, _ = trial_images(train_set, config)
    ensemble = boosting.adaboost_train(
        tr_images,
        tr_labels,
        chi=config.chi,
        base_config=config.convnet_config(),
        seed=config.seed,
    )
    report: dict = {
        "n_train_trials": len(train_set),
        "n_train_crops": int(len(tr_labels)),
        "n_test_trials": len(test_set),
        "members": len(ensemble.members),
        "best_joint": ensemble.best_joint,
        "validation_accuracy": ensemble.validation_accuracy,
        "preprocessing": "zero-phase band-pass "
        f"{config.band[0]:g}-{config.band[1]:g} Hz (order 4, forward-backward)",
    }
    te_images = None
    if len(test_set) > 0:
        te_images, _, te_ids, te_groups = trial_images(test_set, config)
        predictions = []
        truths = []
        for i, rows in enumerate(te_groups):
            label = boosting.predict_trial(ensemble, te_images[rows])
            predictions.append(label)
            truths.append(test_set.trials[i].label)
        eval_report = boosting.evaluate(predictions, truths)
        report["evaluation"] = {
            "tp": eval_report.tp,
            "fp": eval_report.fp,
            "tn": eval_report.tn,
            "fn": eval_report.fn,
            "sensitivity": eval_report.sensitivity,
            "specificity": eval_report.specificity,
            "accuracy": eval_report.accuracy,
            "kappa": eval_report.kappa,
            "per_trial": [
                {"trial_id": tid, "predicted": int(p), "truth": int(t)}
                for tid, p, t in zip(te_ids, predictions, truths)
            ],
        }
    if config.out_dir:
        _write_artifacts(config, report, ensemble, tr_images, te_images)
    return report


def _write_artifacts(config, report, ensemble, tr_images, te_images):
    out = str(config.out_dir)
    os.makedirs(out, exist_ok=True)
    snapshot = dataclasses.asdict(config)
    gridio.atomic_write(
        os.path.join(out, "config.json"),
        json.dumps(snapshot, indent=2, sort_keys=True, default=repr).encode(),
    )
    gridio.write_grid(
        os.path.join(out, "train_images.grid"),
        {"images": tr_images},
        meta={"config": gridio.config_hash(config)},
    )
    if te_images is not None:
        gridio.write_grid(
            os.path.join(out, "test_images.grid"),
            {"images": te_images},
            meta={"config": gridio.config_hash(config)},
        )
    gridio.save_ensemble(os.path.join(out, "model"), ensemble)
    if config.export_graymaps:
        img_dir = os.path.join(out, "images")
        os.makedirs(img_dir, exist_ok=True)
        stacks = [("train", tr_images)]
        if te_images is not None:
            stacks.append(("test", te_images))
        for tag, stack in stacks:
            for i, arr in enumerate(stack):
                export_image(
                    CausalityImage(arr),
                    os.path.join(img_dir, f"{tag}_{i:04d}.pgm"),
                )
    gridio.atomic_write(
        os.path.join(out, "report.json"),
        json.dumps(report, indent=2, sort_keys=True).encode(),
    )
    lines = ["metric,value"]
    if "evaluation" in report:
        ev = report["evaluation"]
        for key in ("tp", "fp", "tn", "fn"):
            lines.append(f"{key},{ev[key]}")
        for key in ("sensitivity", "specificity", "accuracy", "kappa"):
            lines.append(f"{key},{ev[key]!r}")
    gridio.atomic_write(
        os.path.join(out, "report.csv"), ("\n".join(lines) + "\n").encode()
    )
    text = [
        "run report",
        "==========",
        f"training trials: {report['n_train_trials']}",
        f"training crops:  {report['n_train_crops']}",
        f"test trials:     {report['n_test_trials']}",
        f"ensemble members: {report['members']} (best prefix {report['best_joint']})",
        f"preprocessing:   {report['preprocessing']}",
    ]
    if "evaluation" in report:
        ev = report["evaluation"]
        text += [
            f"accuracy:    {ev['accuracy']!r} %",
            f"sensitivity: {ev['sensitivity']!r} %",
            f"specificity: {ev['specificity']!r} %",
            f"kappa:       {ev['kappa']!r}",
        ]
    gridio.atomic_write(
        os.path.join(out, "report.txt"), ("\n".join(text) + "\n").encode()
    )


def gridsearch(
    images: np.ndarray,
    labels: np.ndarray,
    kernels=(10, 15, 20),
    filter_counts=(5, 10),
    block_counts=(1, 2),
    folds: int = 10,
    seed: int = 0,
    max_epochs: int = 20,
) -> list[dict]:
    """K-fold cross-validated search over the architecture grid.

    Returns one record per configuration with its mean fold accuracy,
    best first.
    """
    images = np.asarray(images, float)
    labels = np.asarray(labels)
    n = len(labels)
    folds = min(folds, n)
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    fold_of = np.empty(n, int)
    for pos, idx in enumerate(order):
        fold_of[idx] = pos % folds
    results = []
    for tau in kernels:
        for p1 in filter_counts:
            for blocks in block_counts:
                try:
                    cfg = convnet.ConvNetConfig(
                        temporal_kernel=tau,
                        first_block_filters=p1,
                        block_count=blocks,
                        spatial_height=images.shape[1],
                        max_epochs=max_epochs,
                        early_stop_patience=max_epochs,
                        seed=seed,
                    )
                    convnet._time_lengths(cfg, images.shape[2])
                except convnet.ArchitectureError:
                    continue
                accs = []
                for f in range(folds):
                    va = fold_of == f
                    tr = ~va
                    if len(set(labels[tr].tolist())) < 2 or va.sum() == 0:
                        continue
                    model = convnet.build_convnet(cfg, images.shape[1:])
                    trained = convnet.train(
                        model,
                        images[tr],
                        labels[tr],
                        validation=(images[va], labels[va]),
                    )
                    accs.append(convnet.accuracy(trained, images[va], labels[va]))
                if accs:
                    results.append(
                        {
                            "temporal_kernel": tau,
                            "first_block_filters": p1,
                            "block_count": blocks,
                            "mean_accuracy": float(np.mean(accs)),
                            "folds": len(accs),
                        }
                    )
    results.sort(key=lambda r: -r["mean_accuracy"])
    return results
