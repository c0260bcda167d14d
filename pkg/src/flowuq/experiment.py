"""End-to-end experiment orchestration.

An experiment is described by a flat ``key = value`` config file (plus
command-line overrides): a data source (CSV export or synthetic blobs), a
scenario naming the withheld unknown classes, a model kind, the tasks to
evaluate, and a repetition count.  Results land in
``out/<config-hash>/`` as a deterministic ``report.json``, per-repetition
curve CSVs, and model dumps — identical configs produce byte-identical
reports.

Tasks
-----
closed       accuracy / macro F1 / weighted F1 on the known-class test set
calibration  ECE and MCE over ten confidence bins
rejection    accuracy-rejection curve ranked by predictive uncertainty
ood          ROC of the kind's novelty score, test set vs unknown pool
al           active-learning loop on the training pool
"""

from __future__ import annotations

import hashlib
import inspect
import json
import pathlib
from dataclasses import dataclass, field

import numpy as np

from ._version import __version__

from .active_learning import AlConfig, run_loop
from .data import (
    DEFAULT_DROP_COLUMNS,
    DEFAULT_LABEL_COLUMN,
    ScenarioBundle,
    load_flow_csv,
    make_blob_config,
    partition_scenario,
    standardize_bundle,
    synth_generate,
)
from .evaluation import (
    accuracy_rejection,
    calibration,
    classification_metrics,
    roc,
)
from .exceptions import CapabilityError, ConfigError
from .kinds import MODEL_KIND_NAMES, make_kind
from .numerics import STREAM_EXPERIMENT, derive_seed, entropy
from .ood import ensemble_members
from .uncertainty import decompose

TASKS = ("closed", "calibration", "rejection", "ood", "al")

#: the ten attack classes of the reference flow export, most frequent first
TABLE_CLASS_NAMES = (
    "Benign",
    "Scanning",
    "XSS",
    "DDoS",
    "Password",
    "DoS",
    "Injection",
    "Backdoor",
    "MITM",
    "Ransomware",
)

#: named scenarios: which classes are withheld as unknown
NAMED_SCENARIOS = {
    "3u": ("Backdoor", "MITM", "Ransomware"),
    "6u": ("Password", "DoS", "Injection", "Backdoor", "MITM", "Ransomware"),
    "8u": (
        "XSS",
        "DDoS",
        "Password",
        "DoS",
        "Injection",
        "Backdoor",
        "MITM",
        "Ransomware",
    ),
}

_DEFAULTS = {
    "data": "synth",
    "label_column": DEFAULT_LABEL_COLUMN,
    "drop_columns": ",".join(DEFAULT_DROP_COLUMNS),
    "synth_known": 4,
    "synth_unknown": 1,
    "synth_samples": 500,
    "synth_dim": 8,
    "synth_radius": 6.0,
    "synth_unknown_distance": 20.0,
    "synth_scale": 1.0,
    "scenario": "custom",
    "unknown_classes": None,
    "model": "rf",
    "task": "closed",
    "reps": None,
    "seed": 0,
    "out": "out",
    # network family
    "hidden_layers": None,
    "hidden_width": None,
    "weight_decay": None,
    "learning_rate": None,
    "batch_size": None,
    "epochs": None,
    "batch_norm": None,
    # bayesian network
    "prior_variance": None,
    "n_predict_samples": None,
    "kl_scale": None,
    # forest
    "n_trees": None,
    "max_depth": None,
    "min_samples_split": None,
    "features_per_split": None,
    "bootstrap": None,
    # active learning
    "al_initial_size": 500,
    "al_acquisition_size": 500,
    "al_strategy": "bald",
    "al_max_rounds": 20,
    "al_target_f1": None,
}

_NETWORK_PARAM_KEYS = (
    "hidden_layers",
    "hidden_width",
    "weight_decay",
    "learning_rate",
    "batch_size",
    "epochs",
)
_KIND_PARAM_KEYS = {
    "nn": _NETWORK_PARAM_KEYS + ("batch_norm",),
    "energy": _NETWORK_PARAM_KEYS + ("batch_norm",),
    "ddu": _NETWORK_PARAM_KEYS,
    "bnn": (
        "hidden_layers",
        "hidden_width",
        "learning_rate",
        "batch_size",
        "epochs",
        "prior_variance",
        "n_predict_samples",
        "kl_scale",
    ),
    "rf": (
        "n_trees",
        "max_depth",
        "min_samples_split",
        "features_per_split",
        "bootstrap",
    ),
}

_REP_STREAM = 0x01
_AL_STREAM = 0x0A
_SCORE_STREAM = 0x05
_SYNTH_SEED_STREAM = 0x0D


def _parse_value(raw: str):
    """Read a config value as a JSON fragment, falling back to a bare string."""
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def parse_config_text(text: str) -> dict:
    """Parse flat ``key = value`` lines ('#' starts a comment).

    Values are read as JSON fragments where possible (numbers, booleans,
    null, quoted strings) and kept as bare strings otherwise.  Unknown
    keys are rejected so typos fail loudly.
    """
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _DEFAULTS:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        out[key] = _parse_value(value)
    return out


@dataclass
class ExperimentConfig:
    """Fully resolved experiment settings (defaults + file + overrides)."""

    values: dict = field(default_factory=dict)

    def __post_init__(self):
        merged = dict(_DEFAULTS)
        unknown = set(self.values) - set(_DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        merged.update(self.values)
        self.values = merged
        self._validate()

    @classmethod
    def load(cls, path=None, overrides: dict | None = None) -> "ExperimentConfig":
        values = {}
        if path is not None:
            p = pathlib.Path(path)
            if not p.exists():
                raise ConfigError(f"config file not found: {path}")
            values.update(parse_config_text(p.read_text()))
        for key, value in (overrides or {}).items():
            if value is not None:
                values[key] = _parse_value(value) if isinstance(value, str) else value
        return cls(values)

    def _validate(self):
        v = self.values
        if v["model"] not in MODEL_KIND_NAMES:
            raise ConfigError(
                f"model must be one of {MODEL_KIND_NAMES}, got {v['model']!r}"
            )
        for task in self.tasks():
            if task not in TASKS:
                raise ConfigError(f"task must be among {TASKS}, got {task!r}")
        if v["scenario"] not in ("custom", *NAMED_SCENARIOS):
            raise ConfigError(
                f"scenario must be custom or one of {sorted(NAMED_SCENARIOS)}"
            )
        if not isinstance(v["seed"], int) or isinstance(v["seed"], bool) or v["seed"] < 0:
            raise ConfigError("seed must be a non-negative integer")
        if v["reps"] is not None and (not isinstance(v["reps"], int) or v["reps"] < 1):
            raise ConfigError("reps must be a positive integer")

    # -- accessors ---------------------------------------------------------

    def __getitem__(self, key):
        return self.values[key]

    def tasks(self) -> list:
        raw = self.values["task"]
        if isinstance(raw, str):
            return [t.strip() for t in raw.split(",") if t.strip()]
        return list(raw)

    def reps(self) -> int:
        if self.values["reps"] is not None:
            return int(self.values["reps"])
        return 5 if "al" in self.tasks() else 16

    def model_params(self) -> dict:
        keys = _KIND_PARAM_KEYS[self.values["model"]]
        return {k: self.values[k] for k in keys if self.values[k] is not None}

    def drop_columns(self) -> list:
        raw = self.values["drop_columns"]
        if isinstance(raw, str):
            return [c.strip() for c in raw.split(",") if c.strip()]
        return list(raw)

    def canonical(self) -> dict:
        """The resolved flat config, with derived defaults filled in."""
        out = dict(self.values)
        out["reps"] = self.reps()
        return out

    def config_hash(self) -> str:
        text = json.dumps(self.canonical(), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:12]


def _resolve_dataset(config: ExperimentConfig):
    v = config.values
    if v["data"] == "synth":
        counts = v["synth_samples"]
        if isinstance(counts, str):
            counts = [int(c) for c in counts.split(",")]
        blob = make_blob_config(
            n_known=int(v["synth_known"]),
            n_unknown=int(v["synth_unknown"]),
            samples_per_class=counts,
            dim=int(v["synth_dim"]),
            known_radius=float(v["synth_radius"]),
            unknown_distance=float(v["synth_unknown_distance"]),
            scale=float(v["synth_scale"]),
            seed=derive_seed(v["seed"], STREAM_EXPERIMENT, _SYNTH_SEED_STREAM),
        )
        dataset = synth_generate(
            blob, seed=derive_seed(v["seed"], STREAM_EXPERIMENT, _SYNTH_SEED_STREAM, 1)
        )
        return dataset, 0, blob.unknown_names()
    dataset, rejected = load_flow_csv(
        v["data"], label_column=v["label_column"], drop_columns=config.drop_columns()
    )
    return dataset, rejected, None


def _resolve_unknowns(config: ExperimentConfig, dataset, synth_unknowns):
    v = config.values
    if v["scenario"] != "custom":
        if set(dataset.class_names) != set(TABLE_CLASS_NAMES):
            raise ConfigError(
                f"named scenario {v['scenario']!r} needs exactly the classes "
                f"{sorted(TABLE_CLASS_NAMES)}; this dataset has "
                f"{sorted(dataset.class_names)}"
            )
        return list(NAMED_SCENARIOS[v["scenario"]])
    raw = v["unknown_classes"]
    if raw:
        return [c.strip() for c in raw.split(",")] if isinstance(raw, str) else list(raw)
    if synth_unknowns:
        return synth_unknowns
    raise ConfigError(
        "custom scenario needs unknown_classes (or synthetic data with "
        "unknown-flagged classes)"
    )


def _predictive_uncertainty(kind, model, X, seed):
    """Total predictive entropy: ensemble decomposition when available."""
    if hasattr(model, "sample_proba") or hasattr(model, "member_proba"):
        members = ensemble_members(model, X, seed=seed)
        return np.asarray(decompose(members).total).reshape(-1)
    return np.asarray(entropy(model.predict_proba(X))).reshape(-1)


def _aggregate(per_rep: list) -> dict:
    """Mean and standard error (sample std over sqrt(reps)) per metric."""
    out = {}
    for key in per_rep[0]:
        values = np.array([float(r[key]) for r in per_rep], dtype=np.float64)
        stderr = (
            float(values.std(ddof=1) / np.sqrt(values.size)) if values.size > 1 else 0.0
        )
        out[key] = {"mean": float(values.mean()), "stderr": stderr}
    return out


def run_experiment(config: ExperimentConfig) -> dict:
    """Run every configured task and write the output tree; returns the report."""
    v = config.values
    tasks = config.tasks()
    reps = config.reps()
    kind = make_kind(v["model"], config.model_params())
    if "al" in tasks and v["al_strategy"] == "bald" and not kind.supports_bald:
        raise CapabilityError(
            f"model kind {kind.name!r} cannot drive bald acquisition"
        )

    dataset, rejected, synth_unknowns = _resolve_dataset(config)
    unknowns = _resolve_unknowns(config, dataset, synth_unknowns)
    bundle = partition_scenario(dataset, unknowns, seed=v["seed"])

    out_dir = pathlib.Path(v["out"]) / config.config_hash()
    curves_dir = out_dir / "curves"
    models_dir = out_dir / "models"
    for d in (out_dir, curves_dir, models_dir):
        d.mkdir(parents=True, exist_ok=True)

    if kind.standardize:
        prepared, _ = standardize_bundle(bundle)
    else:
        prepared = bundle

    results = {task: [] for task in tasks}
    seeds = []
    needs_model = any(t != "al" for t in tasks)
    for rep in range(reps):
        rep_seed = derive_seed(v["seed"], STREAM_EXPERIMENT, _REP_STREAM, rep)
        seeds.append(rep_seed)
        score_seed = derive_seed(v["seed"], STREAM_EXPERIMENT, _SCORE_STREAM, rep)
        model = None
        if needs_model:
            model = kind.build(seed=rep_seed, n_classes=len(bundle.known_classes))
            if "X_val" in inspect.signature(model.fit).parameters:
                model.fit(
                    prepared.train.features,
                    prepared.train.labels,
                    X_val=prepared.val.features,
                    y_val=prepared.val.labels,
                )
            else:
                model.fit(prepared.train.features, prepared.train.labels)
            if rep == 0:
                _save_model(model, models_dir / f"{kind.name}_rep00")

        if "closed" in tasks or "calibration" in tasks or "rejection" in tasks:
            test_probs = model.predict_proba(prepared.test.features)
            test_pred = test_probs.argmax(axis=1)
        if "closed" in tasks:
            metrics = classification_metrics(
                test_pred, prepared.test.labels, n_classes=len(bundle.known_classes)
            )
            results["closed"].append(
                {
                    "accuracy": metrics.accuracy,
                    "f1_macro": metrics.f1_macro,
                    "f1_weighted": metrics.f1_weighted,
                }
            )
        if "calibration" in tasks:
            report = calibration(test_probs, prepared.test.labels)
            report.write_csv(curves_dir / f"calibration_rep{rep:02d}.csv")
            results["calibration"].append({"ece": report.ece, "mce": report.mce})
        if "rejection" in tasks:
            uncertainty = _predictive_uncertainty(
                kind, model, prepared.test.features, score_seed
            )
            curve = accuracy_rejection(uncertainty, test_pred, prepared.test.labels)
            curve.write_csv(curves_dir / f"rejection_rep{rep:02d}.csv")
            results["rejection"].append(
                {
                    "accuracy_full": curve.accuracy_at(0.0),
                    "accuracy_at_half": curve.accuracy_at(0.5),
                }
            )
        if "ood" in tasks:
            scores_id = kind.ood_scores(model, prepared.test.features, seed=score_seed)
            scores_ood = kind.ood_scores(model, prepared.ood.features, seed=score_seed)
            curve = roc(scores_id, scores_ood)
            curve.write_csv(curves_dir / f"roc_rep{rep:02d}.csv")
            results["ood"].append({"auroc": curve.auroc, "auroc20": curve.auroc20})
        if "al" in tasks:
            al_seed = derive_seed(v["seed"], STREAM_EXPERIMENT, _AL_STREAM, rep)
            al_config = AlConfig(
                initial_size=int(v["al_initial_size"]),
                acquisition_size=int(v["al_acquisition_size"]),
                strategy=v["al_strategy"],
                max_rounds=int(v["al_max_rounds"]),
                target_f1=v["al_target_f1"],
                seed=al_seed,
            )
            trace = run_loop(kind, bundle.train, bundle.test, al_config)
            trace.write_csv(curves_dir / f"al_rep{rep:02d}.csv")
            results["al"].append(
                {
                    "final_f1_macro": trace.f1_scores()[-1],
                    "final_labeled_size": trace.labeled_sizes()[-1],
                    "rounds": len(trace.rounds),
                }
            )

    report = {
        "version": __version__,
        "config_hash": config.config_hash(),
        "config": config.canonical(),
        "seeds": seeds,
        "data": {
            "classes": dataset.class_names,
            "n_samples": dataset.n_samples,
            "n_features": dataset.n_features,
            "rejected_rows": rejected,
            "known_classes": bundle.known_classes,
            "unknown_classes": bundle.unknown_classes,
            "split_sizes": {
                "train": bundle.train.n_samples,
                "val": bundle.val.n_samples,
                "test": bundle.test.n_samples,
                "ood": bundle.ood.n_samples,
            },
        },
        "tasks": {
            task: {"per_rep": recs, "aggregate": _aggregate(recs)}
            for task, recs in results.items()
        },
    }
    (out_dir / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    return report


def _save_model(model, stem: pathlib.Path) -> None:
    from .kinds import DduPipeline

    if isinstance(model, DduPipeline):
        model.network_.save(f"{stem}.network.npz")
        model.density_.save(f"{stem}.density.npz")
    else:
        model.save(f"{stem}.npz")
