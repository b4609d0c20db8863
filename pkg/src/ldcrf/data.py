"""Dataset files, dataset transforms and the synthetic gesture generator.

On disk a dataset is JSON lines.  An optional first line without a
``features`` key is a header ``{"n_labels": ..., "label_names": [...],
"name": ...}``; every other line is one sample::

    {"id": "s0", "features": [[0.1, 0.2], ...], "labels": [0, 0, ...]}
"""
from __future__ import annotations

import csv
import json
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .complexity import resample
from .model import ContractError, Dataset, SequenceSample


class DatasetFormatError(ValueError):
    pass


def _sample_json(s: SequenceSample) -> dict:
    return {"id": s.id, "features": s.features.tolist(), "labels": s.labels.tolist()}


def dumps(data: Dataset) -> str:
    header = {"n_labels": data.n_labels, "label_names": list(data.label_names or []), "name": data.name}
    lines = [json.dumps(header)] + [json.dumps(_sample_json(s)) for s in data]
    return "\n".join(lines) + "\n"


def save(data: Dataset, path) -> None:
    Path(path).write_text(dumps(data))


def loads(text: str) -> Dataset:
    header: dict = {}
    samples = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"line {lineno}: invalid JSON ({exc.msg})") from None
        if "features" not in doc:
            if samples or header:
                raise DatasetFormatError(f"line {lineno}: header must be the first line")
            header = doc
            continue
        samples.append(_parse_sample(doc, lineno, header.get("n_labels")))
    if not samples:
        raise DatasetFormatError("no samples")
    try:
        return Dataset(
            tuple(samples),
            n_labels=header.get("n_labels"),
            label_names=header.get("label_names") or None,
            name=header.get("name", ""),
        )
    except ContractError as exc:
        raise DatasetFormatError(str(exc)) from None


def _parse_sample(doc: dict, lineno: int, n_labels: int | None) -> SequenceSample:
    features, labels = doc.get("features"), doc.get("labels")
    if not isinstance(features, list) or not isinstance(labels, list):
        raise DatasetFormatError(f"line {lineno}: 'features' and 'labels' must be lists")
    widths = {len(row) if isinstance(row, list) else -1 for row in features}
    if len(widths) > 1 or -1 in widths:
        raise DatasetFormatError(f"line {lineno}: ragged feature rows")
    if len(features) != len(labels):
        raise DatasetFormatError(
            f"line {lineno}: {len(features)} feature frames but {len(labels)} labels"
        )
    if any(not isinstance(y, int) or y < 0 or (n_labels is not None and y >= n_labels) for y in labels):
        raise DatasetFormatError(f"line {lineno}: unknown label index")
    try:
        return SequenceSample(str(doc.get("id", f"line{lineno}")), np.array(features, dtype=float), np.array(labels))
    except (ContractError, ValueError) as exc:
        raise DatasetFormatError(f"line {lineno}: {exc}") from None


def load(path) -> Dataset:
    return loads(Path(path).read_text())


def import_csv(path, name: str = "") -> Dataset:
    """Read a frame table with columns ``sequence_id, t, f1..fd, label``.

    Sequences keep the order of their first row; frames are sorted by ``t``.
    """
    rows: OrderedDict[str, list] = OrderedDict()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) < 4:
            raise DatasetFormatError("CSV needs columns sequence_id, t, features..., label")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DatasetFormatError(f"line {lineno}: expected {len(header)} columns")
            try:
                rows.setdefault(row[0], []).append(
                    (float(row[1]), [float(v) for v in row[2:-1]], int(row[-1]))
                )
            except ValueError as exc:
                raise DatasetFormatError(f"line {lineno}: {exc}") from None
    if not rows:
        raise DatasetFormatError("no samples")
    samples = []
    for sid, frames in rows.items():
        frames.sort(key=lambda r: r[0])
        samples.append(SequenceSample(sid, np.array([f[1] for f in frames]), np.array([f[2] for f in frames])))
    return Dataset(tuple(samples), name=name)


@dataclass(frozen=True)
class GroupingSpec:
    group_a: frozenset[int]
    group_b: frozenset[int]

    def __post_init__(self):
        object.__setattr__(self, "group_a", frozenset(int(v) for v in self.group_a))
        object.__setattr__(self, "group_b", frozenset(int(v) for v in self.group_b))
        if not self.group_a or not self.group_b:
            raise ContractError("both groups must be nonempty")
        if self.group_a & self.group_b:
            raise ContractError("groups overlap")

    def validate(self, n_labels: int) -> None:
        if self.group_a | self.group_b != set(range(n_labels)):
            raise ContractError(f"groups must cover labels 0..{n_labels - 1} exactly")

    def tag(self) -> str:
        """Label sets in the ``01-2345`` notation."""
        sep = "" if max(self.group_a | self.group_b) < 10 else ","
        a = sep.join(str(v) for v in sorted(self.group_a))
        b = sep.join(str(v) for v in sorted(self.group_b))
        return f"{a}-{b}"

    @classmethod
    def parse(cls, text: str) -> "GroupingSpec":
        """Parse ``"0,1-2,3,4,5"`` or the compact ``"01-2345"`` form."""
        left, _, right = text.partition("-")
        def parse_side(side):
            side = side.strip()
            return {int(v) for v in side.split(",")} if "," in side else {int(c) for c in side}
        return cls(frozenset(parse_side(left)), frozenset(parse_side(right)))


def make_binary(data: Dataset, spec: GroupingSpec, prefix: str | None = None) -> Dataset:
    """Collapse labels to 0 (``group_a``) and 1 (``group_b``)."""
    spec.validate(data.n_labels)
    lookup = np.array([0 if y in spec.group_a else 1 for y in range(data.n_labels)])
    samples = tuple(SequenceSample(s.id, s.features, lookup[s.labels]) for s in data)
    prefix = data.name if prefix is None else prefix
    return Dataset(samples, n_labels=2, name=f"{prefix}{spec.tag()}")


def concat_many(data: Dataset, group_size: int = 3, seed: int = 0) -> Dataset:
    """Shuffle samples and join consecutive runs of ``group_size`` into one stream.

    Leftover samples that do not fill a group are dropped.
    """
    if group_size < 1:
        raise ContractError("group_size must be >= 1")
    if len(data) < group_size:
        raise ContractError(f"{len(data)} samples cannot fill a group of {group_size}")
    order = np.random.default_rng(seed).permutation(len(data))
    out = []
    for g in range(len(data) // group_size):
        parts = [data.samples[i] for i in order[g * group_size : (g + 1) * group_size]]
        out.append(
            SequenceSample(
                "+".join(p.id for p in parts),
                np.concatenate([p.features for p in parts]),
                np.concatenate([p.labels for p in parts]),
            )
        )
    return Dataset(tuple(out), n_labels=data.n_labels, label_names=data.label_names,
                   name=f"{data.name}-many" if data.name else "many")


def subsample(data: Dataset, stride: int = 2) -> Dataset:
    """Keep every ``stride``-th frame of every sample, starting at frame 0."""
    if stride < 1:
        raise ContractError("stride must be >= 1")
    samples = tuple(SequenceSample(s.id, s.features[::stride], s.labels[::stride]) for s in data)
    return Dataset(samples, n_labels=data.n_labels, label_names=data.label_names, name=data.name)


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of the prototype-mixture generator.

    ``prototypes_per_label`` is one count shared by all labels or one count
    per label.  Prototypes are smoothed random walks offset by a random
    center; ``prototype_spread`` scales the centers and ``walk_scale`` the
    walk steps.
    """

    n_labels: int = 2
    prototypes_per_label: int | tuple[int, ...] = 1
    feature_dim: int = 2
    mean_length: int = 20
    length_jitter: int = 3
    noise_sigma: float = 0.3
    samples_per_label: int = 20
    seed: int = 0
    prototype_spread: float = 2.0
    walk_scale: float = 0.3
    smoothing: int = 5

    def __post_init__(self):
        protos = self.prototypes_per_label
        protos = (protos,) * self.n_labels if isinstance(protos, int) else tuple(protos)
        object.__setattr__(self, "prototypes_per_label", protos)
        if len(protos) != self.n_labels:
            raise ContractError("need one prototype count per label")
        counts = (self.n_labels, self.feature_dim, self.mean_length, self.samples_per_label, self.smoothing) + protos
        if min(counts) < 1:
            raise ContractError("all counts must be >= 1")
        if self.noise_sigma < 0 or self.length_jitter < 0:
            raise ContractError("noise_sigma and length_jitter must be >= 0")

    def to_json(self) -> dict:
        doc = dict(self.__dict__)
        doc["prototypes_per_label"] = list(self.prototypes_per_label)
        return doc


def _smooth(walk: np.ndarray, window: int) -> np.ndarray:
    if window <= 1:
        return walk
    padded = np.pad(walk, ((window // 2, window - 1 - window // 2), (0, 0)), mode="edge")
    kernel = np.ones(window) / window
    return np.column_stack([np.convolve(padded[:, j], kernel, mode="valid") for j in range(walk.shape[1])])


def prototypes(spec: SynthSpec, rng: np.random.Generator) -> list[list[np.ndarray]]:
    out = []
    for n_proto in spec.prototypes_per_label:
        label_protos = []
        for _ in range(n_proto):
            center = rng.normal(0.0, spec.prototype_spread, spec.feature_dim)
            walk = np.cumsum(rng.normal(0.0, spec.walk_scale, (spec.mean_length, spec.feature_dim)), axis=0)
            walk = _smooth(walk, spec.smoothing)
            label_protos.append(center + walk - walk.mean(axis=0))
        out.append(label_protos)
    return out


def synth(spec: SynthSpec) -> Dataset:
    """Generate a dataset of single-label sequences; deterministic in ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    protos = prototypes(spec, rng)
    samples = []
    for y, label_protos in enumerate(protos):
        for i in range(spec.samples_per_label):
            proto = label_protos[int(rng.integers(len(label_protos)))]
            length = max(1, spec.mean_length + int(rng.integers(-spec.length_jitter, spec.length_jitter + 1)))
            x = resample(proto, length) + rng.normal(0.0, spec.noise_sigma, (length, spec.feature_dim))
            samples.append(SequenceSample(f"L{y}-{i}", x, np.full(length, y)))
    return Dataset(tuple(samples), n_labels=spec.n_labels, name="SY")


def mixture_benchmark(seed: int = 0) -> Dataset:
    """The bundled binary benchmark.

    Label 0 mixes three prototypes, label 1 has one.  Single-gesture samples
    are concatenated in random triples into 60 multi-gesture streams.
    """
    spec = SynthSpec(**{**BENCHMARK_SPEC, "seed": seed})
    return concat_many(synth(spec), BENCHMARK_GROUP_SIZE, seed)


BENCHMARK_SPEC: dict = dict(
    n_labels=2,
    prototypes_per_label=(3, 1),
    feature_dim=2,
    mean_length=12,
    length_jitter=2,
    noise_sigma=0.8,
    samples_per_label=90,
    prototype_spread=2.0,
    walk_scale=0.3,
    smoothing=5,
)
BENCHMARK_GROUP_SIZE = 3
