"""Per-label complexity profile from pairwise distances between same-label instances.

An *instance* of a label is a maximal run of consecutive frames carrying that
label inside one sample.  For single-gesture data every sample is one
instance; in concatenated streams each constituent segment becomes one
(adjacent segments sharing a label merge into a single run).

All instances of a label are linearly resampled to the longest instance of
that label, then the per-frame Euclidean distances between every pair of
instances are summed.  The per-label sums are normalized to total one.
"""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .model import ContractError, Dataset

VARIANTS = ("literal-sum", "mean-pair")
PAIRINGS = ("unordered", "ordered")
DISTANCES = ("framewise", "flat")


@dataclass(frozen=True)
class ComplexityProfile:
    values: tuple[float, ...]
    raw: tuple[float, ...]
    pair_counts: tuple[int, ...]
    variant: str = "literal-sum"

    def to_json(self) -> dict:
        return {
            "values": list(self.values),
            "raw": list(self.raw),
            "pair_counts": list(self.pair_counts),
            "variant": self.variant,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ComplexityProfile":
        return cls(
            tuple(float(v) for v in doc["values"]),
            tuple(float(v) for v in doc.get("raw", ())),
            tuple(int(v) for v in doc.get("pair_counts", ())),
            doc.get("variant", "literal-sum"),
        )


def resample(series, target_length: int) -> np.ndarray:
    """Linearly interpolate a (T, d) series onto ``target_length`` evenly spaced points.

    The new points span the original index range ``[0, T-1]``, so both
    endpoints are kept exactly.  A 1-D input is treated as a single feature.
    """
    x = np.asarray(series, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None]
    if x.shape[0] < 1 or target_length < 1:
        raise ContractError("resample needs at least one input frame and one output frame")
    src = np.arange(x.shape[0], dtype=np.float64)
    pos = np.linspace(0.0, x.shape[0] - 1, target_length)
    out = np.column_stack([np.interp(pos, src, x[:, j]) for j in range(x.shape[1])])
    return out[:, 0] if squeeze else out


def _frame_norms(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if a.shape != b.shape:
        raise ContractError(f"series shapes differ: {a.shape} vs {b.shape}")
    return np.sqrt(np.sum((a - b) ** 2, axis=1))


def pair_distance(a, b, distance: str = "framewise") -> float:
    """Distance between two equal-length series.

    ``framewise`` sums the Euclidean norm of each frame difference;
    ``flat`` is the Euclidean norm of the concatenated difference.
    """
    norms = _frame_norms(a, b)
    if distance == "framewise":
        return math.fsum(norms)
    if distance == "flat":
        return math.sqrt(math.fsum(norms**2))
    raise ContractError(f"unknown distance {distance!r}")


def label_instances(data: Dataset) -> list[list[np.ndarray]]:
    """Feature segments of every maximal same-label run, grouped by label."""
    groups: list[list[np.ndarray]] = [[] for _ in range(data.n_labels)]
    for s in data:
        change = np.flatnonzero(np.diff(s.labels)) + 1
        for start, stop in zip(np.r_[0, change], np.r_[change, len(s)]):
            groups[int(s.labels[start])].append(s.features[start:stop])
    return groups


def profile_from_groups(
    groups: list[list[np.ndarray]],
    variant: str = "literal-sum",
    pairs: str = "unordered",
    distance: str = "framewise",
) -> ComplexityProfile:
    if variant not in VARIANTS:
        raise ContractError(f"unknown variant {variant!r}")
    if pairs not in PAIRINGS:
        raise ContractError(f"unknown pairing {pairs!r}")
    if distance not in DISTANCES:
        raise ContractError(f"unknown distance {distance!r}")
    raw, counts = [], []
    for items in groups:
        if not items:
            raise ContractError("every label needs at least one instance")
        length = max(len(x) for x in items)
        aligned = [resample(x, length) for x in items]
        combos = (
            itertools.permutations(range(len(aligned)), 2)
            if pairs == "ordered"
            else itertools.combinations(range(len(aligned)), 2)
        )
        terms, n_pairs = [], 0
        for i, j in combos:
            if distance == "framewise":
                # pool frame terms so the label total is rounded only once
                terms.extend(_frame_norms(aligned[i], aligned[j]).tolist())
            else:
                terms.append(pair_distance(aligned[i], aligned[j], distance))
            n_pairs += 1
        total = math.fsum(terms)
        if variant == "mean-pair":
            total = total / n_pairs if n_pairs else 0.0
        raw.append(total)
        counts.append(n_pairs)
    grand = math.fsum(raw)
    if grand > 0:
        values = tuple(r / grand for r in raw)
    else:
        warnings.warn(
            "all labels have zero spread; using a uniform complexity profile",
            RuntimeWarning,
            stacklevel=2,
        )
        values = (1.0 / len(raw),) * len(raw)
    return ComplexityProfile(values, tuple(raw), tuple(counts), variant)


def comp_measure(
    data: Dataset,
    variant: str = "literal-sum",
    pairs: str = "unordered",
    distance: str = "framewise",
) -> ComplexityProfile:
    """Normalized per-label complexity of ``data``.

    ``variant="mean-pair"`` divides each label's sum by its number of pairs,
    removing the dependence on how many instances a label has.  ``pairs``
    selects whether each unordered pair is counted once or twice.
    """
    return profile_from_groups(label_instances(data), variant, pairs, distance)
