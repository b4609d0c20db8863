"""Maximum-likelihood training of latent-dynamic CRFs.

The objective is the negative conditional log-likelihood of the label series,
marginalized over every latent path consistent with the labels, plus an L2
penalty::

    NLL(theta) = sum_i [log Z(x_i) - log Z_masked(x_i, y_i)] + l2/2 * |theta|^2

Its gradient is the difference between feature expectations under the free
chain and under the label-clamped chain.  The objective is non-convex once a
label owns more than one latent value, so training starts from a deterministic
warm start built by PCA-seeded k-means inside every label.
"""
from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .inference import _padded, chain_tables, label_mask
from .model import ContractError, Dataset, LatentMap, ModelParams

log = logging.getLogger(__name__)

DEFAULT_L2 = 1e-2


@dataclass(frozen=True)
class TrainConfig:
    l2_strength: float = DEFAULT_L2
    max_iterations: int = 200
    gradient_tolerance: float = 1e-5
    seed: int = 0
    warm_start_epsilon: float = 0.1
    workers: int = 1

    def __post_init__(self):
        if self.l2_strength < 0:
            raise ContractError("l2_strength must be >= 0")
        if self.max_iterations < 1:
            raise ContractError("max_iterations must be >= 1")
        if self.gradient_tolerance <= 0:
            raise ContractError("gradient_tolerance must be > 0")
        if self.workers < 1:
            raise ContractError("workers must be >= 1")

    def to_json(self) -> dict:
        # workers is an execution detail and does not change results
        return {
            "l2_strength": self.l2_strength,
            "max_iterations": self.max_iterations,
            "gradient_tolerance": self.gradient_tolerance,
            "seed": self.seed,
            "warm_start_epsilon": self.warm_start_epsilon,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "TrainConfig":
        return cls(**doc)


@dataclass(frozen=True)
class TrainResult:
    params: ModelParams
    final_nll: float
    iterations_used: int
    converged: bool
    trace: list[tuple[int, float, float]] = field(default_factory=list)

    def write_trace(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "nll", "grad_norm"])
            for row in self.trace:
                writer.writerow([row[0], repr(row[1]), repr(row[2])])


class TrainingError(RuntimeError):
    pass


class _Batch:
    """Dataset packed into padded arrays, split into fixed chunks."""

    def __init__(self, data: Dataset, latent_map: LatentMap, chunks: int = 1):
        if latent_map.n_labels != data.n_labels:
            raise ContractError(
                f"latent map covers {latent_map.n_labels} labels, data has {data.n_labels}"
            )
        self.latent_map = latent_map
        self.feature_dim = data.feature_dim
        bounds = np.array_split(np.arange(len(data)), min(chunks, len(data)))
        self.parts = []
        for idx in bounds:
            x, y, lengths = _padded([data.samples[i] for i in idx], data.feature_dim)
            self.parts.append((x, label_mask(latent_map, y), lengths))

    @staticmethod
    def _terms(part, params: ModelParams):
        """Per-sample NLL terms and gradient contributions for one chunk."""
        x, mask, lengths = part
        node = x @ params.emission.T
        n = node.shape[0]
        # free and clamped chains share one pass; rows never interact
        log_z, marg, edges = chain_tables(
            np.concatenate([node, node + mask]), params.transition, np.concatenate([lengths, lengths])
        )
        log_z, log_zc = log_z[:n], log_z[n:]
        free_node, clamp_node = marg[:n], marg[n:]
        free_edge, clamp_edge = edges[:n], edges[n:]
        diff = free_node - clamp_node
        g_emit = np.sum(diff[:, :, :, None] * x[:, :, None, :], axis=1)
        g_trans = np.sum(free_edge - clamp_edge, axis=1)
        return log_z - log_zc, g_emit, g_trans

    def evaluate(self, params: ModelParams, l2: float, pool=None):
        if pool is None:
            results = [self._terms(p, params) for p in self.parts]
        else:
            results = list(pool.map(lambda p: self._terms(p, params), self.parts))
        # reduce per sample in dataset order so chunking never changes the sum
        nll_terms = np.concatenate([r[0] for r in results])
        g_emit = np.concatenate([r[1] for r in results])
        g_trans = np.concatenate([r[2] for r in results])
        nll = 0.0
        ge = np.zeros(params.emission.shape)
        gt = np.zeros(params.transition.shape)
        for i in range(nll_terms.shape[0]):
            nll += nll_terms[i]
            ge += g_emit[i]
            gt += g_trans[i]
        theta = params.flat()
        nll += 0.5 * l2 * float(theta @ theta)
        ge += l2 * params.emission
        gt += l2 * params.transition
        return nll, np.concatenate([ge.ravel(), gt.ravel()])


def nll_and_gradient(
    params: ModelParams, latent_map: LatentMap, data: Dataset, l2: float
) -> tuple[float, ModelParams]:
    """Regularized NLL and its gradient, shaped like ``params``."""
    params.check_compatible(latent_map, data.feature_dim)
    nll, grad = _Batch(data, latent_map).evaluate(params, l2)
    if not np.all(np.isfinite(grad)):
        raise TrainingError("non-finite gradient")
    return float(nll), ModelParams.from_flat(grad, params.n_latent, params.feature_dim)


def _pca_kmeans(points: np.ndarray, k: int, max_iter: int = 100) -> np.ndarray:
    """Deterministic k-means; returns cluster index per point, all clusters nonempty.

    Initial centroids: sort points by their first principal component score
    (stable) and take the mean of each of ``k`` equal-frequency bins.
    """
    centered = points - points.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    pc = vt[0]
    # fix the sign of the component so the ordering is reproducible
    j = np.argmax(np.abs(pc))
    if pc[j] < 0:
        pc = -pc
    order = np.argsort(centered @ pc, kind="stable")
    centroids = np.array([points[b].mean(axis=0) for b in np.array_split(order, k)])

    assign = None
    for _ in range(max_iter):
        d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new = np.argmin(d2, axis=1)
        new = _repair_empty(points, new, centroids, k)
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
        centroids = np.array([points[assign == c].mean(axis=0) for c in range(k)])
    return assign


def _repair_empty(points, assign, centroids, k):
    """Give each empty cluster the point farthest from its centroid in the largest cluster."""
    assign = assign.copy()
    for c in range(k):
        if np.any(assign == c):
            continue
        sizes = np.bincount(assign, minlength=k)
        big = int(np.argmax(sizes))
        members = np.flatnonzero(assign == big)
        dist = ((points[members] - centroids[big]) ** 2).sum(axis=1)
        # the farthest point; among equals, the last one in input order
        far = members[len(dist) - 1 - int(np.argmax(dist[::-1]))]
        assign[far] = c
    return assign


def init_latent_assignment(data: Dataset, latent_map: LatentMap, seed: int = 0) -> list[np.ndarray]:
    """Initial latent value for every frame of every sample.

    Frames of each label are pooled across samples and clustered into
    ``counts[y]`` groups.  The procedure is deterministic; ``seed`` is accepted
    for interface stability and currently unused.
    """
    if latent_map.n_labels != data.n_labels:
        raise ContractError("latent map and dataset disagree on n_labels")
    features = np.concatenate([s.features for s in data])
    labels = np.concatenate([s.labels for s in data])
    latent = np.empty(labels.shape[0], dtype=np.int64)
    for y, k in enumerate(latent_map.counts):
        idx = np.flatnonzero(labels == y)
        if idx.size < k:
            name = data.label_names[y] if data.label_names else str(y)
            raise ContractError(
                f"label {name} has {idx.size} frames but {k} latent values"
            )
        if k == 1:
            latent[idx] = latent_map.offsets[y]
        else:
            latent[idx] = latent_map.offsets[y] + _pca_kmeans(features[idx], k)
    out, start = [], 0
    for s in data:
        out.append(latent[start : start + len(s)])
        start += len(s)
    return out


def warm_start_params(
    data: Dataset,
    latent_map: LatentMap,
    assignment: list[np.ndarray],
    epsilon: float = 0.1,
) -> ModelParams:
    """Starting weights from a hard latent assignment.

    Emission row ``h`` is ``epsilon * [centroid_h, 1]``; transitions are
    ``epsilon * log P(b | a)`` from latent bigram counts with add-one smoothing.
    """
    H, d = latent_map.n_latent, data.feature_dim
    owner = latent_map.owner()
    sums = np.zeros((H, d))
    counts = np.zeros(H)
    bigrams = np.ones((H, H))
    for s, h in zip(data, assignment):
        h = np.asarray(h)
        if h.shape != s.labels.shape or np.any(owner[h] != s.labels):
            raise ContractError(f"assignment for sample {s.id!r} is inconsistent with the map")
        np.add.at(sums, h, s.features)
        np.add.at(counts, h, 1)
        np.add.at(bigrams, (h[:-1], h[1:]), 1)
    centroids = sums / np.maximum(counts, 1)[:, None]
    emission = epsilon * np.hstack([centroids, np.ones((H, 1))])
    transition = epsilon * np.log(bigrams / bigrams.sum(axis=1, keepdims=True))
    return ModelParams(emission, transition)


def train(data: Dataset, latent_map: LatentMap, config: TrainConfig = TrainConfig()) -> TrainResult:
    """Fit parameters with L-BFGS from the k-means warm start."""
    assignment = init_latent_assignment(data, latent_map, config.seed)
    start = warm_start_params(data, latent_map, assignment, config.warm_start_epsilon)
    return fit(data, latent_map, start, config)


def fit(data: Dataset, latent_map: LatentMap, start: ModelParams, config: TrainConfig) -> TrainResult:
    """Optimize from explicit starting parameters; returns the best parameters seen."""
    start.check_compatible(latent_map, data.feature_dim)
    H, d = latent_map.n_latent, data.feature_dim
    batch = _Batch(data, latent_map, chunks=config.workers)
    best = {"nll": np.inf, "theta": start.flat()}
    state = {"iteration": 0, "last": None}
    trace: list[tuple[int, float, float]] = []

    pool = ThreadPoolExecutor(config.workers) if config.workers > 1 else None

    def objective(theta):
        params = ModelParams.from_flat(theta, H, d)
        nll, grad = batch.evaluate(params, config.l2_strength, pool)
        if not (np.isfinite(nll) and np.all(np.isfinite(grad))):
            raise TrainingError(f"non-finite objective at iteration {state['iteration']}")
        if nll < best["nll"]:
            best["nll"], best["theta"] = float(nll), theta.copy()
        state["last"] = (theta.copy(), float(nll), grad)
        return float(nll), grad

    def callback(intermediate_result):
        state["iteration"] += 1
        theta, nll, grad = state["last"]
        if not np.array_equal(theta, intermediate_result.x):
            nll, grad = objective(intermediate_result.x)
        trace.append((state["iteration"], nll, float(np.max(np.abs(grad)))))

    try:
        nll0, g0 = objective(start.flat())
        trace.append((0, nll0, float(np.max(np.abs(g0)))))
        if np.max(np.abs(g0)) < config.gradient_tolerance:
            result_nit = 0
        else:
            res = minimize(
                objective,
                start.flat(),
                jac=True,
                method="L-BFGS-B",
                callback=callback,
                options={
                    "maxiter": config.max_iterations,
                    "gtol": config.gradient_tolerance,
                    "ftol": 1e-15,
                    "maxcor": 20,
                },
            )
            result_nit = int(res.nit)
    finally:
        if pool is not None:
            pool.shutdown()

    params = ModelParams.from_flat(best["theta"], H, d)
    final_nll, grad = batch.evaluate(params, config.l2_strength)
    grad_norm = float(np.max(np.abs(grad)))
    log.debug("trained %s: nll=%.6f |g|=%.2e after %d iterations",
              latent_map.counts, final_nll, grad_norm, result_nit)
    return TrainResult(
        params=params,
        final_nll=float(final_nll),
        iterations_used=result_nit,
        converged=grad_norm < config.gradient_tolerance,
        trace=trace,
    )
