"""Domain types shared across the package: sequences, datasets, latent maps
and model parameters, plus the JSON model file format.

Latent values are indexed globally and contiguously by label: the latent
values owned by label ``y`` are ``range(offsets[y], offsets[y] + counts[y])``.

The emission matrix carries one extra trailing column, a bias weight applied
to an implicit constant-1 feature appended to every frame.  Parameters are
stationary: the same weights score every position of the chain.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


class ContractError(ValueError):
    """Raised when an argument violates a documented precondition."""


def _frozen(array, dtype) -> np.ndarray:
    out = np.array(array, dtype=dtype, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class SequenceSample:
    """One recording: ``features`` is (T, d), ``labels`` is (T,)."""

    id: str
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        features = _frozen(self.features, np.float64)
        labels = _frozen(self.labels, np.int64)
        if features.ndim != 2:
            raise ContractError(f"sample {self.id!r}: features must be a (T, d) array")
        if labels.ndim != 1:
            raise ContractError(f"sample {self.id!r}: labels must be a 1-D series")
        if features.shape[0] != labels.shape[0]:
            raise ContractError(
                f"sample {self.id!r}: {features.shape[0]} feature frames but "
                f"{labels.shape[0]} labels"
            )
        if features.shape[0] < 1 or features.shape[1] < 1:
            raise ContractError(f"sample {self.id!r}: needs T >= 1 and d >= 1")
        if np.any(labels < 0):
            raise ContractError(f"sample {self.id!r}: negative label index")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def __eq__(self, other):
        if not isinstance(other, SequenceSample):
            return NotImplemented
        return (
            self.id == other.id
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
        )


@dataclass(frozen=True, eq=False)
class Dataset:
    """An ordered collection of samples over a shared label space.

    ``n_labels`` defaults to one more than the largest label present.  Every
    label index in ``[0, n_labels)`` must occur somewhere in the data.
    """

    samples: tuple[SequenceSample, ...]
    n_labels: int | None = None
    label_names: tuple[str, ...] | None = None
    name: str = ""

    def __post_init__(self):
        samples = tuple(self.samples)
        if not samples:
            raise ContractError("no samples")
        dims = {s.feature_dim for s in samples}
        if len(dims) != 1:
            raise ContractError(f"samples disagree on feature_dim: {sorted(dims)}")
        present = np.unique(np.concatenate([s.labels for s in samples]))
        n_labels = int(present[-1]) + 1 if self.n_labels is None else int(self.n_labels)
        if present[-1] >= n_labels:
            raise ContractError(f"label index {int(present[-1])} >= n_labels={n_labels}")
        if len(present) != n_labels:
            missing = sorted(set(range(n_labels)) - set(present.tolist()))
            raise ContractError(f"labels {missing} never occur in the data")
        names = self.label_names
        if names is not None:
            names = tuple(str(n) for n in names)
            if len(names) != n_labels:
                raise ContractError("label_names length differs from n_labels")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "n_labels", n_labels)
        object.__setattr__(self, "label_names", names)

    @property
    def feature_dim(self) -> int:
        return self.samples[0].feature_dim

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i: int) -> SequenceSample:
        return self.samples[i]

    def subset(self, indices: Sequence[int], name: str | None = None) -> "Dataset":
        """Samples at ``indices`` (in that order), keeping the label space."""
        return Dataset(
            tuple(self.samples[i] for i in indices),
            n_labels=self.n_labels,
            label_names=self.label_names,
            name=self.name if name is None else name,
        )

    def total_frames(self) -> int:
        return sum(len(s) for s in self.samples)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.n_labels == other.n_labels
            and self.label_names == other.label_names
            and self.name == other.name
            and self.samples == other.samples
        )


@dataclass(frozen=True)
class LatentMap:
    """Per-label latent counts; ``counts[y]`` latent values belong to label ``y``."""

    counts: tuple[int, ...]
    offsets: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        if not counts:
            raise ContractError("a latent map needs at least one label")
        if any(c < 1 for c in counts):
            raise ContractError(f"every label needs at least one latent value, got {counts}")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "offsets", tuple(int(o) for o in np.cumsum((0,) + counts[:-1])))

    @property
    def n_labels(self) -> int:
        return len(self.counts)

    @property
    def n_latent(self) -> int:
        return sum(self.counts)

    def latent_range(self, y: int) -> range:
        return range(self.offsets[y], self.offsets[y] + self.counts[y])

    def owner(self) -> np.ndarray:
        """Array of length |H| giving the label of every latent value."""
        return np.repeat(np.arange(self.n_labels), self.counts)

    def to_json(self) -> dict:
        return {"latent_counts": list(self.counts)}

    @classmethod
    def from_json(cls, doc: dict) -> "LatentMap":
        return cls(tuple(doc["latent_counts"]))


def label_of(latent_map: LatentMap, h: int) -> int:
    """Label index owning latent value ``h``."""
    if not 0 <= h < latent_map.n_latent:
        raise ContractError(f"latent index {h} outside [0, {latent_map.n_latent})")
    return int(np.searchsorted(latent_map.offsets, h, side="right")) - 1


def uniform_latent_map(n_labels: int, total: int) -> LatentMap:
    """The arbitrary baseline: ``total`` latent values split evenly."""
    if n_labels < 1 or total < n_labels:
        raise ContractError(f"total={total} is smaller than n_labels={n_labels}")
    if total % n_labels:
        raise ContractError(f"total={total} is not divisible by n_labels={n_labels}")
    return LatentMap((total // n_labels,) * n_labels)


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Emission weights (|H|, d+1), last column bias; transitions (|H|, |H|)."""

    emission: np.ndarray
    transition: np.ndarray

    def __post_init__(self):
        emission = _frozen(self.emission, np.float64)
        transition = _frozen(self.transition, np.float64)
        if emission.ndim != 2 or emission.shape[1] < 2:
            raise ContractError("emission must be (|H|, d+1) with d >= 1")
        n = emission.shape[0]
        if transition.shape != (n, n):
            raise ContractError(f"transition must be ({n}, {n}), got {transition.shape}")
        if not (np.all(np.isfinite(emission)) and np.all(np.isfinite(transition))):
            raise ContractError("model parameters must be finite")
        object.__setattr__(self, "emission", emission)
        object.__setattr__(self, "transition", transition)

    @property
    def n_latent(self) -> int:
        return self.emission.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.emission.shape[1] - 1

    @classmethod
    def zeros(cls, n_latent: int, feature_dim: int) -> "ModelParams":
        return cls(np.zeros((n_latent, feature_dim + 1)), np.zeros((n_latent, n_latent)))

    def flat(self) -> np.ndarray:
        return np.concatenate([self.emission.ravel(), self.transition.ravel()])

    @classmethod
    def from_flat(cls, theta: np.ndarray, n_latent: int, feature_dim: int) -> "ModelParams":
        k = n_latent * (feature_dim + 1)
        return cls(
            theta[:k].reshape(n_latent, feature_dim + 1),
            theta[k:].reshape(n_latent, n_latent),
        )

    def check_compatible(self, latent_map: LatentMap, feature_dim: int) -> None:
        if self.n_latent != latent_map.n_latent:
            raise ContractError(
                f"parameters have {self.n_latent} latent values, map has {latent_map.n_latent}"
            )
        if self.feature_dim != feature_dim:
            raise ContractError(
                f"parameters expect {self.feature_dim} features, data has {feature_dim}"
            )

    def __eq__(self, other):
        if not isinstance(other, ModelParams):
            return NotImplemented
        return np.array_equal(self.emission, other.emission) and np.array_equal(
            self.transition, other.transition
        )


@dataclass(frozen=True)
class Model:
    """A trained model bundle as stored in a model file."""

    params: ModelParams
    latent_map: LatentMap
    label_names: tuple[str, ...] | None = None

    @property
    def n_labels(self) -> int:
        return self.latent_map.n_labels

    @property
    def feature_dim(self) -> int:
        return self.params.feature_dim

    def to_json(self) -> dict:
        # json writes floats with repr(), the shortest string that parses back
        # to the same double (at most 17 significant digits), so the file
        # round-trips exactly.
        return {
            "n_labels": self.n_labels,
            "feature_dim": self.feature_dim,
            "latent_counts": list(self.latent_map.counts),
            "emission": self.params.emission.tolist(),
            "transition": self.params.transition.tolist(),
            "label_names": list(self.label_names) if self.label_names else [],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "Model":
        latent_map = LatentMap(tuple(doc["latent_counts"]))
        if latent_map.n_labels != doc["n_labels"]:
            raise ContractError("latent_counts length differs from n_labels")
        params = ModelParams(np.array(doc["emission"], dtype=float), np.array(doc["transition"], dtype=float))
        params.check_compatible(latent_map, int(doc["feature_dim"]))
        names = doc.get("label_names") or None
        return cls(params, latent_map, tuple(names) if names else None)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()) + "\n")

    @classmethod
    def load(cls, path) -> "Model":
        return cls.from_json(json.loads(Path(path).read_text()))
