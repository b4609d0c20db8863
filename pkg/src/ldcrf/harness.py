"""Experiment protocols: the latent-assignment sensitivity study and nested
cross-validation comparing allocation strategies.

Folds split whole sequences, stratified by each sequence's majority label, and
are shared by every strategy in a run.  Within an outer fold the complexity
profile is computed from the outer training portion only; the inner folds
choose the latent total and the final model is refit on the whole outer
training portion.
"""
from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .allocation import AllocationError, AllocationRequest, dist
from .complexity import ComplexityProfile, comp_measure
from .inference import predict_many
from .model import ContractError, Dataset, LatentMap, ModelParams, uniform_latent_map
from .training import TrainConfig, train

log = logging.getLogger(__name__)

STRATEGIES = ("complexity", "uniform", "explicit")


def frame_accuracy(pred: Sequence[np.ndarray], truth: Sequence[np.ndarray]) -> float:
    """Fraction of correctly labeled frames, pooled over all sequences."""
    if len(pred) != len(truth):
        raise ContractError("prediction and truth hold different numbers of sequences")
    hits = total = 0
    for p, t in zip(pred, truth):
        p, t = np.asarray(p), np.asarray(t)
        if p.shape != t.shape:
            raise ContractError(f"sequence shapes differ: {p.shape} vs {t.shape}")
        hits += int(np.sum(p == t))
        total += t.size
    if total == 0:
        raise ContractError("no frames to score")
    return hits / total


def confusion(pred, truth, n_labels: int, normalize: bool = False) -> np.ndarray:
    """Rows are true labels, columns predicted labels.

    With ``normalize`` each row is divided by its sum; rows of labels that
    never occur in ``truth`` stay zero.
    """
    m = np.zeros((n_labels, n_labels), dtype=np.int64)
    for p, t in zip(pred, truth):
        np.add.at(m, (np.asarray(t), np.asarray(p)), 1)
    if normalize:
        sums = m.sum(axis=1, keepdims=True)
        return np.divide(m, sums, out=np.zeros(m.shape), where=sums > 0)
    return m


def fold_indices(data: Dataset, n_folds: int, seed: int) -> list[np.ndarray]:
    """Held-out sample indices for each of ``n_folds`` folds.

    Samples are shuffled with ``seed`` and dealt round-robin within each
    majority-label stratum, so every fold sees every label where possible.
    """
    if n_folds < 2:
        raise ContractError("need at least two folds")
    if len(data) < n_folds:
        raise ContractError(f"{len(data)} samples cannot fill {n_folds} folds")
    majority = np.array([np.bincount(s.labels, minlength=data.n_labels).argmax() for s in data])
    perm = np.random.default_rng(seed).permutation(len(data))
    folds: list[list[int]] = [[] for _ in range(n_folds)]
    position = 0
    for y in range(data.n_labels):
        for i in perm[majority[perm] == y]:
            folds[position % n_folds].append(int(i))
            position += 1
    return [np.sort(np.array(f, dtype=np.int64)) for f in folds]


def split(data: Dataset, test: np.ndarray) -> tuple[Dataset, Dataset]:
    held = set(test.tolist())
    train_idx = [i for i in range(len(data)) if i not in held]
    return data.subset(train_idx), data.subset(test.tolist())


def evaluate(params: ModelParams, latent_map: LatentMap, data: Dataset, normalize: bool = True) -> dict:
    pred = predict_many(params, latent_map, data.samples)
    truth = [s.labels for s in data]
    return {
        "accuracy": frame_accuracy(pred, truth),
        "confusion": confusion(pred, truth, data.n_labels, normalize=normalize).tolist(),
        "confusion_counts": confusion(pred, truth, data.n_labels).tolist(),
    }


def _fit_and_score(job):
    train_data, test_data, counts, config = job
    latent_map = LatentMap(counts)
    result = train(train_data, latent_map, config)
    pred = predict_many(result.params, latent_map, test_data.samples)
    truth = [s.labels for s in test_data]
    return {
        "accuracy": frame_accuracy(pred, truth),
        "confusion_counts": confusion(pred, truth, test_data.n_labels),
        "params": result.params,
        "final_nll": result.final_nll,
    }


def _run_jobs(jobs: dict, workers: int) -> dict:
    """Run keyed training jobs; results are keyed, so scheduling never matters."""
    keys = sorted(jobs, key=repr)
    if workers > 1 and len(keys) > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_fit_and_score, [jobs[k] for k in keys]))
    else:
        results = [_fit_and_score(jobs[k]) for k in keys]
    return dict(zip(keys, results))


@dataclass(frozen=True)
class ExperimentConfig:
    latent_totals: tuple[int, ...]
    strategies: tuple[str, ...] = ("complexity", "uniform")
    caps: tuple[float, ...] = (1.0,)
    explicit: tuple[tuple[int, ...], ...] = ()
    outer_folds: int = 3
    inner_folds: int = 5
    seed: int = 0
    train_config: TrainConfig = field(default_factory=TrainConfig)
    dataset_path: str | None = None
    complexity_variant: str = "literal-sum"
    complexity_pairs: str = "unordered"
    complexity_distance: str = "framewise"
    criterion: str = "normalized"
    cap_rule: str = "inclusive"
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "latent_totals", tuple(int(t) for t in self.latent_totals))
        object.__setattr__(self, "strategies", tuple(self.strategies))
        object.__setattr__(self, "caps", tuple(float(c) for c in self.caps))
        object.__setattr__(self, "explicit", tuple(tuple(int(v) for v in e) for e in self.explicit))
        if not self.latent_totals and not self.explicit:
            raise ContractError("the latent-total grid is empty")
        if self.outer_folds < 2 or self.inner_folds < 2:
            raise ContractError("folds must be >= 2")
        unknown = set(self.strategies) - set(STRATEGIES)
        if unknown:
            raise ContractError(f"unknown strategies {sorted(unknown)}")
        if "explicit" in self.strategies and not self.explicit:
            raise ContractError("the explicit strategy needs explicit count vectors")

    def to_json(self) -> dict:
        return {
            "dataset_path": self.dataset_path,
            "latent_totals": list(self.latent_totals),
            "strategies": list(self.strategies),
            "caps": list(self.caps),
            "explicit": [list(e) for e in self.explicit],
            "outer_folds": self.outer_folds,
            "inner_folds": self.inner_folds,
            "seed": self.seed,
            "train_config": self.train_config.to_json(),
            "complexity_variant": self.complexity_variant,
            "complexity_pairs": self.complexity_pairs,
            "complexity_distance": self.complexity_distance,
            "criterion": self.criterion,
            "cap_rule": self.cap_rule,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ExperimentConfig":
        doc = dict(doc)
        if "train_config" in doc:
            doc["train_config"] = TrainConfig.from_json(doc["train_config"])
        return cls(**doc)

    def digest(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def _arms(config: ExperimentConfig) -> list[tuple[str, str, float | None]]:
    """(arm name, strategy, cap) for every compared configuration."""
    arms = []
    for strategy in config.strategies:
        if strategy == "complexity":
            arms.extend((f"complexity(c={c:g})", strategy, c) for c in config.caps)
        else:
            arms.append((strategy, strategy, None))
    return arms


def _candidates(config, strategy, cap, profile, n_labels):
    """Candidate latent maps per grid entry plus the entries skipped as infeasible."""
    maps, skipped = [], []
    if strategy == "explicit":
        for counts in config.explicit:
            maps.append((sum(counts), LatentMap(counts)))
        return maps, skipped
    for total in config.latent_totals:
        try:
            if strategy == "uniform":
                latent_map = uniform_latent_map(n_labels, total)
            else:
                req = AllocationRequest(total, profile.values, cap)
                latent_map = dist(req, config.criterion, config.cap_rule)
        except (ContractError, AllocationError) as exc:
            skipped.append({"total": total, "reason": str(exc)})
            continue
        maps.append((total, latent_map))
    return maps, skipped


def run_outer_fold(data: Dataset, config: ExperimentConfig, fold: int) -> dict:
    """Inner selection and final training for one outer fold.

    Returns per-arm selections, test metrics and the final parameters, plus the
    complexity profile computed on this fold's training portion.
    """
    outer = fold_indices(data, config.outer_folds, config.seed)
    train_data, test_data = split(data, outer[fold])
    profile = comp_measure(
        train_data, config.complexity_variant, config.complexity_pairs, config.complexity_distance
    )
    inner = fold_indices(train_data, config.inner_folds, config.seed * 1000 + fold + 1)
    inner_splits = [split(train_data, idx) for idx in inner]

    arms = {}
    jobs = {}
    for name, strategy, cap in _arms(config):
        maps, skipped = _candidates(config, strategy, cap, profile, data.n_labels)
        arms[name] = (maps, skipped)
        for _, latent_map in maps:
            for j, (tr, va) in enumerate(inner_splits):
                jobs[(j, latent_map.counts)] = (tr, va, latent_map.counts, config.train_config)
    inner_results = _run_jobs(jobs, config.workers)

    selections = {}
    final_jobs = {}
    for name, (maps, skipped) in arms.items():
        if not maps:
            raise ContractError(f"no feasible latent total for {name}")
        scores = []
        for order, (total, latent_map) in enumerate(maps):
            accs = [inner_results[(j, latent_map.counts)]["accuracy"] for j in range(len(inner_splits))]
            scores.append((float(np.mean(accs)), total, order, latent_map))
        # best mean accuracy; ties go to the smaller total, then grid order
        best = min(scores, key=lambda s: (-round(s[0], 12), s[1], s[2]))
        selections[name] = {
            "inner_scores": [{"total": s[1], "counts": list(s[3].counts), "mean_accuracy": s[0]} for s in scores],
            "skipped": skipped,
            "selected_total": best[1],
            "counts": list(best[3].counts),
        }
        final_jobs[("final", best[3].counts)] = (train_data, test_data, best[3].counts, config.train_config)
    final_results = _run_jobs(final_jobs, config.workers)

    for name, sel in selections.items():
        res = final_results[("final", tuple(sel["counts"]))]
        sel["accuracy"] = res["accuracy"]
        sel["confusion_counts"] = res["confusion_counts"]
        sel["params"] = res["params"]
        sel["final_nll"] = res["final_nll"]
    return {
        "fold": fold,
        "n_train": len(train_data),
        "n_test": len(test_data),
        "test_ids": [s.id for s in test_data],
        "profile": profile,
        "arms": selections,
    }


def nested_cv(data: Dataset, config: ExperimentConfig) -> dict:
    """Full nested cross-validation report (JSON-ready)."""
    folds = [run_outer_fold(data, config, k) for k in range(config.outer_folds)]
    strategies = {}
    for name, _, _ in _arms(config):
        outer = []
        pooled = np.zeros((data.n_labels, data.n_labels), dtype=np.int64)
        for f in folds:
            sel = f["arms"][name]
            pooled += sel["confusion_counts"]
            outer.append({
                "fold": f["fold"],
                "selected_total": sel["selected_total"],
                "counts": sel["counts"],
                "accuracy": sel["accuracy"],
                "final_nll": sel["final_nll"],
                "inner_scores": sel["inner_scores"],
                "skipped": sel["skipped"],
            })
        accs = np.array([o["accuracy"] for o in outer])
        sums = pooled.sum(axis=1, keepdims=True)
        strategies[name] = {
            "outer": outer,
            "mean_accuracy": float(accs.mean()),
            "std_accuracy": float(accs.std()),
            "confusion_counts": pooled.tolist(),
            "confusion": np.divide(pooled, sums, out=np.zeros(pooled.shape), where=sums > 0).tolist(),
        }
    return {
        "dataset": _dataset_summary(data),
        "config": config.to_json(),
        "config_hash": config.digest(),
        "profiles": [{"fold": f["fold"], **f["profile"].to_json()} for f in folds],
        "strategies": strategies,
        "notes": [
            "accuracy is frame-level, pooled over all frames of the held-out sequences",
            "std_accuracy is the population std over outer folds",
            "the complexity profile is recomputed on each outer fold's training sequences",
            "inner-CV ties are broken toward the smaller latent total",
        ],
    }


def sensitivity_study(data: Dataset, assignments: Sequence[Sequence[int]], split_seed: int = 0,
                      train_config: TrainConfig = TrainConfig()) -> dict:
    """Train one model per explicit latent assignment on a 2/3 split, test on 1/3."""
    test = fold_indices(data, 3, split_seed)[0]
    train_data, test_data = split(data, test)
    rows = []
    for counts in assignments:
        latent_map = LatentMap(tuple(counts))
        result = train(train_data, latent_map, train_config)
        rows.append({"counts": list(latent_map.counts), "final_nll": result.final_nll,
                     **evaluate(result.params, latent_map, test_data)})
    return {
        "dataset": _dataset_summary(data),
        "split_seed": split_seed,
        "n_train": len(train_data),
        "n_test": len(test_data),
        "train_config": train_config.to_json(),
        "assignments": rows,
    }


def _dataset_summary(data: Dataset) -> dict:
    return {
        "name": data.name,
        "n_samples": len(data),
        "n_labels": data.n_labels,
        "total_frames": data.total_frames(),
    }


def report_rows(report: dict) -> list[dict]:
    """Flat per-(strategy, fold) table for CSV export."""
    rows = []
    for name, block in report["strategies"].items():
        for o in block["outer"]:
            rows.append({
                "strategy": name,
                "fold": o["fold"],
                "selected_total": o["selected_total"],
                "counts": " ".join(str(c) for c in o["counts"]),
                "accuracy": o["accuracy"],
            })
        rows.append({"strategy": name, "fold": "mean", "selected_total": "",
                     "counts": "", "accuracy": block["mean_accuracy"]})
        rows.append({"strategy": name, "fold": "std", "selected_total": "",
                     "counts": "", "accuracy": block["std_accuracy"]})
    return rows


def with_workers(config: ExperimentConfig, workers: int) -> ExperimentConfig:
    return replace(config, workers=workers)
