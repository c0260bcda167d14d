"""Flow datasets: CSV ingestion, splits, standardization, synthetic blobs.

A :class:`FlowDataset` is an immutable-by-convention bundle of a float64
feature matrix, dense integer labels and the two name tables that give the
columns and classes meaning.  Everything downstream (models, evaluation,
the experiment runner) works on these bundles or on raw arrays.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import ConfigError, DataError
from .numerics import STREAM_DATA, derive_rng
from .validation import check_features, check_is_fitted

#: columns removed by default during ingestion (identifiers, timestamps and
#: the redundant binary label); columns not present are silently skipped
DEFAULT_DROP_COLUMNS = (
    "IPV4_SRC_ADDR",
    "IPV4_DST_ADDR",
    "L7_PROTO_NAME",
    "FLOW_START_MILLISECONDS",
    "FLOW_END_MILLISECONDS",
    "Label",
)

#: default column holding the multi-class attack label
DEFAULT_LABEL_COLUMN = "Attack"

_DUMP_FORMAT = "flowuq-dataset-v1"

# minimum standard deviation before a column counts as constant
_STD_FLOOR = 1e-12

_SPLIT_STREAM = 0x51
_SUBSAMPLE_STREAM = 0x52
_SYNTH_STREAM = 0x53


@dataclass
class FlowDataset:
    """Feature matrix plus labels and name tables.

    Attributes
    ----------
    features : ndarray of shape (n, d)
        Finite float64 feature values.
    labels : ndarray of shape (n,)
        Dense class ids indexing into ``class_names``.
    class_names : list of str
        One name per class id, in id order.
    feature_names : list of str
        One name per feature column.
    """

    features: np.ndarray
    labels: np.ndarray
    class_names: list[str] = field(default_factory=list)
    feature_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise DataError("features must be 2-d")
        if self.labels.shape != (self.features.shape[0],):
            raise DataError("labels must align with feature rows")
        if not np.all(np.isfinite(self.features)):
            raise DataError("features must be finite")
        if not self.class_names:
            n = int(self.labels.max()) + 1 if self.labels.size else 0
            self.class_names = [str(i) for i in range(n)]
        if not self.feature_names:
            self.feature_names = [f"f{j}" for j in range(self.features.shape[1])]
        if len(self.feature_names) != self.features.shape[1]:
            raise DataError("feature_names must align with feature columns")
        if self.labels.size and int(self.labels.max()) >= len(self.class_names):
            raise DataError("labels reference classes outside class_names")

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def class_counts(self) -> np.ndarray:
        """Per-class sample counts, aligned with ``class_names``."""
        return np.bincount(self.labels, minlength=self.n_classes)

    def select(self, indices) -> "FlowDataset":
        """A new dataset holding the given rows (name tables shared)."""
        idx = np.asarray(indices, dtype=np.int64)
        return FlowDataset(
            features=self.features[idx].copy(),
            labels=self.labels[idx].copy(),
            class_names=list(self.class_names),
            feature_names=list(self.feature_names),
        )

    def with_features(self, features: np.ndarray) -> "FlowDataset":
        """Same rows and labels, different feature values (e.g. standardized)."""
        return FlowDataset(
            features=np.asarray(features, dtype=np.float64),
            labels=self.labels.copy(),
            class_names=list(self.class_names),
            feature_names=list(self.feature_names),
        )


def save_dataset(dataset: FlowDataset, path) -> None:
    """Write a dataset to ``path`` as an .npz archive (bit-exact round trip)."""
    np.savez(
        path,
        format=np.array(_DUMP_FORMAT),
        features=dataset.features,
        labels=dataset.labels,
        class_names=np.array(dataset.class_names, dtype=object),
        feature_names=np.array(dataset.feature_names, dtype=object),
    )


def load_dataset(path) -> FlowDataset:
    """Read a dataset written by :func:`save_dataset`."""
    with np.load(path, allow_pickle=True) as archive:
        if "format" not in archive or str(archive["format"]) != _DUMP_FORMAT:
            raise DataError(f"unrecognized dataset dump format in {path}")
        return FlowDataset(
            features=archive["features"],
            labels=archive["labels"],
            class_names=[str(c) for c in archive["class_names"]],
            feature_names=[str(c) for c in archive["feature_names"]],
        )


def load_flow_csv(
    path,
    label_column: str = DEFAULT_LABEL_COLUMN,
    drop_columns=DEFAULT_DROP_COLUMNS,
) -> tuple[FlowDataset, int]:
    """Ingest a flow-export CSV into a :class:`FlowDataset`.

    The label column is pulled out and mapped to dense ids in order of first
    appearance; ``drop_columns`` are removed when present; every remaining
    column is parsed as a number.  Rows with any unparsable or non-finite
    feature value (or a missing label) are rejected.

    Returns
    -------
    (dataset, n_rejected)
        The clean dataset and the number of rejected rows.
    """
    try:
        frame = pd.read_csv(path, low_memory=False)
    except FileNotFoundError:
        raise DataError(f"no such file: {path}") from None
    except pd.errors.EmptyDataError:
        raise DataError(f"{path} is empty") from None
    if label_column not in frame.columns:
        raise DataError(
            f"label column {label_column!r} not found in {path} "
            f"(columns: {', '.join(map(str, frame.columns[:8]))}...)"
        )
    labels_raw = frame[label_column]
    feature_frame = frame.drop(
        columns=[c for c in (*drop_columns, label_column) if c in frame.columns]
    )
    if feature_frame.shape[1] == 0:
        raise DataError("no feature columns remain after dropping")

    numeric = feature_frame.apply(pd.to_numeric, errors="coerce")
    values = numeric.to_numpy(dtype=np.float64)
    good = np.all(np.isfinite(values), axis=1) & labels_raw.notna().to_numpy()
    n_rejected = int((~good).sum())
    if not good.any():
        raise DataError(f"no valid rows in {path}")

    kept_labels = labels_raw[good].astype(str).to_numpy()
    class_names = list(pd.unique(kept_labels))
    lookup = {name: i for i, name in enumerate(class_names)}
    labels = np.array([lookup[v] for v in kept_labels], dtype=np.int64)

    dataset = FlowDataset(
        features=values[good],
        labels=labels,
        class_names=class_names,
        feature_names=[str(c) for c in feature_frame.columns],
    )
    return dataset, n_rejected


@dataclass
class ScenarioBundle:
    """Known-class train/val/test splits plus the held-out unknown pool.

    ``train``/``val``/``test`` carry labels re-indexed over
    ``known_classes``; ``ood`` carries labels re-indexed over
    ``unknown_classes`` and is never seen during training.
    """

    train: FlowDataset
    val: FlowDataset
    test: FlowDataset
    ood: FlowDataset
    known_classes: list[str]
    unknown_classes: list[str]


def _split_counts(n: int) -> tuple[int, int, int]:
    """60/20/20 split sizes for ``n`` samples (within one sample of exact)."""
    n_train = int(round(0.6 * n))
    n_val = int(round(0.2 * n))
    n_val = min(n_val, n - n_train)
    return n_train, n_val, n - n_train - n_val


def partition_scenario(
    dataset: FlowDataset, unknown_classes, seed: int = 0
) -> ScenarioBundle:
    """Split a dataset into known train/val/test and an unknown pool.

    Known classes are split 60/20/20 per class after a seeded shuffle.
    Unknown classes are subsampled (without replacement) to the size of the
    rarest unknown class, so every unknown class contributes equally.
    """
    unknown = list(dict.fromkeys(unknown_classes))
    missing = [c for c in unknown if c not in dataset.class_names]
    if missing:
        raise ConfigError(f"unknown classes not in dataset: {missing}")
    if not unknown:
        raise ConfigError("at least one unknown class is required")
    known = [c for c in dataset.class_names if c not in unknown]
    if not known:
        raise ConfigError("at least one known class must remain")

    rng = derive_rng(seed, STREAM_DATA, _SPLIT_STREAM)
    old_to_known = {dataset.class_names.index(c): i for i, c in enumerate(known)}
    train_idx, val_idx, test_idx = [], [], []
    for old_id in sorted(old_to_known):
        members = np.nonzero(dataset.labels == old_id)[0]
        members = members[rng.permutation(len(members))]
        n_tr, n_va, _ = _split_counts(len(members))
        train_idx.append(members[:n_tr])
        val_idx.append(members[n_tr : n_tr + n_va])
        test_idx.append(members[n_tr + n_va :])

    def known_subset(chunks) -> FlowDataset:
        idx = np.concatenate(chunks) if chunks else np.array([], dtype=np.int64)
        remap = np.full(dataset.n_classes, -1, dtype=np.int64)
        for old_id, new_id in old_to_known.items():
            remap[old_id] = new_id
        return FlowDataset(
            features=dataset.features[idx].copy(),
            labels=remap[dataset.labels[idx]],
            class_names=list(known),
            feature_names=list(dataset.feature_names),
        )

    sub_rng = derive_rng(seed, STREAM_DATA, _SUBSAMPLE_STREAM)
    unknown_ids = [dataset.class_names.index(c) for c in unknown]
    per_class = [np.nonzero(dataset.labels == uid)[0] for uid in unknown_ids]
    if any(len(m) == 0 for m in per_class):
        empty = [c for c, m in zip(unknown, per_class) if len(m) == 0]
        raise DataError(f"unknown classes with no samples: {empty}")
    quota = min(len(m) for m in per_class)
    ood_chunks, ood_labels = [], []
    for new_id, members in enumerate(per_class):
        picked = sub_rng.choice(len(members), size=quota, replace=False)
        ood_chunks.append(members[np.sort(picked)])
        ood_labels.append(np.full(quota, new_id, dtype=np.int64))
    ood = FlowDataset(
        features=dataset.features[np.concatenate(ood_chunks)].copy(),
        labels=np.concatenate(ood_labels),
        class_names=list(unknown),
        feature_names=list(dataset.feature_names),
    )
    return ScenarioBundle(
        train=known_subset(train_idx),
        val=known_subset(val_idx),
        test=known_subset(test_idx),
        ood=ood,
        known_classes=list(known),
        unknown_classes=list(unknown),
    )


class Standardizer(BaseEstimator, TransformerMixin):
    """Column-wise standardization to zero mean and unit population std.

    Columns whose population standard deviation falls below ``1e-12`` are
    treated as constant and get a divisor of exactly 1, so constant columns
    pass through centred but unscaled.
    """

    def fit(self, X, y=None):
        X = check_features(X)
        self.means_ = X.mean(axis=0)
        stds = X.std(axis=0)  # population (ddof=0)
        self.stds_ = np.where(stds < _STD_FLOOR, 1.0, stds)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "means_")
        X = check_features(X, n_features=self.n_features_in_)
        return (X - self.means_) / self.stds_


def standardize_bundle(bundle: ScenarioBundle) -> tuple[ScenarioBundle, Standardizer]:
    """Standardize every split of a bundle using train-split statistics."""
    scaler = Standardizer().fit(bundle.train.features)
    return (
        ScenarioBundle(
            train=bundle.train.with_features(scaler.transform(bundle.train.features)),
            val=bundle.val.with_features(scaler.transform(bundle.val.features)),
            test=bundle.test.with_features(scaler.transform(bundle.test.features)),
            ood=bundle.ood.with_features(scaler.transform(bundle.ood.features)),
            known_classes=list(bundle.known_classes),
            unknown_classes=list(bundle.unknown_classes),
        ),
        scaler,
    )


@dataclass(frozen=True)
class SynthClass:
    """One Gaussian blob: class name, sample count, center and spread."""

    name: str
    count: int
    center: tuple
    scale: float = 1.0
    unknown: bool = False


@dataclass(frozen=True)
class SynthConfig:
    """Blueprint for a synthetic blob dataset."""

    classes: tuple
    dim: int

    def unknown_names(self) -> list[str]:
        return [c.name for c in self.classes if c.unknown]


def synth_generate(config: SynthConfig, seed: int = 0) -> FlowDataset:
    """Sample a blob dataset: isotropic Gaussians at the configured centers."""
    if not config.classes:
        raise ConfigError("synthetic config needs at least one class")
    for cls in config.classes:
        if cls.count <= 0:
            raise ConfigError(f"class {cls.name!r} has non-positive count")
        if cls.scale <= 0:
            raise ConfigError(f"class {cls.name!r} has non-positive scale")
        if len(cls.center) != config.dim:
            raise ConfigError(
                f"class {cls.name!r} center has length {len(cls.center)}, "
                f"expected {config.dim}"
            )
    rng = derive_rng(seed, STREAM_DATA, _SYNTH_STREAM)
    blocks, labels = [], []
    for class_id, cls in enumerate(config.classes):
        center = np.asarray(cls.center, dtype=np.float64)
        blocks.append(center + cls.scale * rng.standard_normal((cls.count, config.dim)))
        labels.append(np.full(cls.count, class_id, dtype=np.int64))
    return FlowDataset(
        features=np.concatenate(blocks),
        labels=np.concatenate(labels),
        class_names=[c.name for c in config.classes],
        feature_names=[f"x{j}" for j in range(config.dim)],
    )


def make_blob_config(
    n_known: int = 4,
    n_unknown: int = 1,
    samples_per_class=500,
    dim: int = 8,
    known_radius: float = 6.0,
    unknown_distance: float = 20.0,
    scale: float = 1.0,
    seed: int = 0,
) -> SynthConfig:
    """A ready-made blob layout: known centers on a sphere, unknowns far out.

    Known centers are drawn in random directions at ``known_radius`` from
    the origin; each unknown center sits ``unknown_distance`` out along its
    own random direction, re-drawn until it keeps at least
    ``unknown_distance - known_radius`` from every known center.

    ``samples_per_class`` may be a single int or a sequence giving one
    count per class (knowns first, then unknowns).
    """
    if n_known < 1 or n_unknown < 0:
        raise ConfigError("need at least one known class")
    total = n_known + n_unknown
    if np.isscalar(samples_per_class):
        counts = [int(samples_per_class)] * total
    else:
        counts = [int(c) for c in samples_per_class]
        if len(counts) != total:
            raise ConfigError(
                f"samples_per_class has {len(counts)} entries, expected {total}"
            )
    rng = derive_rng(seed, STREAM_DATA, _SYNTH_STREAM, 0x0C)

    def random_direction() -> np.ndarray:
        while True:
            v = rng.standard_normal(dim)
            norm = np.linalg.norm(v)
            if norm > 1e-6:
                return v / norm

    known_centers = [known_radius * random_direction() for _ in range(n_known)]
    classes = [
        SynthClass(
            name=f"known_{i}",
            count=counts[i],
            center=tuple(center),
            scale=scale,
        )
        for i, center in enumerate(known_centers)
    ]
    min_gap = unknown_distance - known_radius
    for j in range(n_unknown):
        for _ in range(256):
            center = unknown_distance * random_direction()
            gaps = [np.linalg.norm(center - kc) for kc in known_centers]
            if min(gaps) >= min_gap:
                break
        classes.append(
            SynthClass(
                name=f"unknown_{j}",
                count=counts[n_known + j],
                center=tuple(center),
                scale=scale,
                unknown=True,
            )
        )
    return SynthConfig(classes=tuple(classes), dim=dim)


def bundle_to_dir(bundle: ScenarioBundle, out_dir) -> None:
    """Write a scenario bundle as four dataset dumps plus a meta file."""
    import pathlib

    out = pathlib.Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for split in ("train", "val", "test", "ood"):
        save_dataset(getattr(bundle, split), out / f"{split}.npz")
    meta = {
        "known_classes": bundle.known_classes,
        "unknown_classes": bundle.unknown_classes,
    }
    (out / "scenario.json").write_text(json.dumps(meta, indent=2))


def bundle_from_dir(in_dir) -> ScenarioBundle:
    """Read a scenario bundle written by :func:`bundle_to_dir`."""
    import pathlib

    src = pathlib.Path(in_dir)
    meta_path = src / "scenario.json"
    if not meta_path.exists():
        raise DataError(f"{in_dir} does not look like a scenario directory")
    meta = json.loads(meta_path.read_text())
    parts = {s: load_dataset(src / f"{s}.npz") for s in ("train", "val", "test", "ood")}
    return ScenarioBundle(
        **parts,
        known_classes=list(meta["known_classes"]),
        unknown_classes=list(meta["unknown_classes"]),
    )
