"""Exact sum-product inference on the latent chain.

Everything runs in the natural-log domain.  The workhorse, :func:`chain_tables`,
operates on a padded batch of chains of possibly different lengths so that
training can evaluate a whole dataset with a handful of vectorized numpy calls
per time step; the single-sample functions are thin wrappers around it.

Per-sample results never depend on which other samples share the batch: every
operation is elementwise across the batch axis.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import ContractError, LatentMap, ModelParams, SequenceSample


def logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    """log(sum(exp(a))) along ``axis``; all ``-inf`` slices give ``-inf``."""
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    return np.squeeze(out, axis=axis)


@dataclass(frozen=True, eq=False)
class ChainPotentials:
    """Log-potentials of one chain: node (T, |H|), shared edge (|H|, |H|)."""

    node_scores: np.ndarray
    edge_scores: np.ndarray

    def __post_init__(self):
        node = np.asarray(self.node_scores, dtype=np.float64)
        edge = np.asarray(self.edge_scores, dtype=np.float64)
        if node.ndim != 2 or node.shape[0] < 1:
            raise ContractError("node_scores must be (T, |H|) with T >= 1")
        if edge.shape != (node.shape[1], node.shape[1]):
            raise ContractError("edge_scores must be (|H|, |H|)")
        if not (np.all(np.isfinite(node)) and np.all(np.isfinite(edge))):
            raise ContractError("potentials must be finite")
        object.__setattr__(self, "node_scores", node)
        object.__setattr__(self, "edge_scores", edge)

    @property
    def length(self) -> int:
        return self.node_scores.shape[0]

    @property
    def n_latent(self) -> int:
        return self.node_scores.shape[1]


@dataclass(frozen=True, eq=False)
class PosteriorTables:
    log_partition: float
    node_marginals: np.ndarray  # (T, |H|)
    edge_marginals: np.ndarray  # (T-1, |H|, |H|)


def augment(features: np.ndarray) -> np.ndarray:
    """Append the constant-1 bias feature along the last axis."""
    ones = np.ones(features.shape[:-1] + (1,))
    return np.concatenate([features, ones], axis=-1)


def potentials(params: ModelParams, sample: SequenceSample) -> ChainPotentials:
    if sample.feature_dim != params.feature_dim:
        raise ContractError(
            f"sample has {sample.feature_dim} features, parameters expect {params.feature_dim}"
        )
    return ChainPotentials(augment(sample.features) @ params.emission.T, params.transition)


def chain_tables(node: np.ndarray, edge: np.ndarray, lengths: np.ndarray):
    """Forward-backward over a padded batch.

    Parameters
    ----------
    node : (N, T, H) array
        Node log-potentials; entries past a chain's length are ignored and
        may hold anything finite.  ``-inf`` masks a latent value out.
    edge : (H, H) array
        Transition log-potentials shared by all positions and chains.
    lengths : (N,) int array

    Returns
    -------
    log_z : (N,) array
    node_marg : (N, T, H) array, zero past each chain's end
    edge_marg : (N, T-1, H, H) array, zero past each chain's end

    Notes
    -----
    Runs the scaled recursion in probability space, with node and edge
    scores shifted by their maxima.  If a scale factor underflows, the batch
    is redone in the log domain.
    """
    out = _scaled_tables(node, edge, lengths)
    return out if out is not None else _log_tables(node, edge, lengths)


# below this a scale factor is close to denormal and loses precision
_SCALE_FLOOR = 1e-200
_TINY = np.finfo(float).tiny


def _scaled_tables(node, edge, lengths):
    n, T, H = node.shape
    valid = np.arange(T)[None, :] < lengths[:, None]
    shift = node.max(axis=2, keepdims=True)
    if not np.all(np.isfinite(shift[valid])):
        return None
    # padded frames may be fully masked; any finite shift will do there
    shift = np.where(np.isfinite(shift), shift, 0.0)
    psi = np.exp(node - shift)
    edge_shift = edge.max()
    E = np.exp(edge - edge_shift)
    alpha = np.empty_like(psi)
    scale = np.empty((n, T))
    v = psi[:, 0]
    for t in range(T):
        if t:
            v = (alpha[:, t - 1] @ E) * psi[:, t]
        scale[:, t] = v.sum(axis=1)
        alpha[:, t] = v / np.maximum(scale[:, t], _TINY)[:, None]
    used = np.where(valid, scale, 1.0)
    if not (np.all(used > _SCALE_FLOOR) and np.all(np.isfinite(used))):
        return None
    log_z = np.sum(np.log(used) + np.where(valid, shift[:, :, 0], 0.0), axis=1) + (lengths - 1) * edge_shift

    beta = np.ones_like(psi)
    last = (lengths - 1)[:, None]
    for t in range(T - 2, -1, -1):
        step = ((psi[:, t + 1] * beta[:, t + 1]) @ E.T) / used[:, t + 1, None]
        beta[:, t] = np.where(t >= last, 1.0, step)
    node_marg = alpha * beta * valid[:, :, None]
    if T > 1:
        right = psi[:, 1:] * beta[:, 1:] * (valid[:, 1:] / used[:, 1:])[:, :, None]
        edge_marg = alpha[:, :-1, :, None] * E * right[:, :, None, :]
    else:
        edge_marg = np.zeros((n, 0, H, H))
    return log_z, node_marg, edge_marg


def _log_tables(node, edge, lengths):
    n, T, H = node.shape
    alpha = np.empty_like(node)
    beta = np.empty_like(node)
    alpha[:, 0] = node[:, 0]
    for t in range(1, T):
        alpha[:, t] = node[:, t] + logsumexp(alpha[:, t - 1, :, None] + edge, axis=1)
    last = (lengths - 1)[:, None]
    beta[:, T - 1] = 0.0
    for t in range(T - 2, -1, -1):
        step = logsumexp(edge + (node[:, t + 1] + beta[:, t + 1])[:, None, :], axis=2)
        beta[:, t] = np.where(t >= last, 0.0, step)
    log_z = logsumexp(alpha[np.arange(n), lengths - 1], axis=1)

    # padded positions get -inf exponents so they come out as exact zeros
    pad = np.where(np.arange(T)[None, :] < lengths[:, None], 0.0, -np.inf)
    node_marg = np.exp(alpha + beta - log_z[:, None, None] + pad[:, :, None])
    if T > 1:
        edge_marg = np.exp(
            alpha[:, :-1, :, None]
            + edge
            + (node[:, 1:] + beta[:, 1:] + pad[:, 1:, None])[:, :, None, :]
            - log_z[:, None, None, None]
        )
    else:
        edge_marg = np.zeros((n, 0, H, H))
    return log_z, node_marg, edge_marg


def label_mask(latent_map: LatentMap, labels: np.ndarray) -> np.ndarray:
    """Additive mask: 0 where a latent value's owner matches the frame label, else -inf."""
    owner = latent_map.owner()
    return np.where(owner == np.asarray(labels)[..., None], 0.0, -np.inf)


def forward_backward(pot: ChainPotentials) -> PosteriorTables:
    log_z, node_marg, edge_marg = chain_tables(
        pot.node_scores[None], pot.edge_scores, np.array([pot.length])
    )
    return PosteriorTables(float(log_z[0]), node_marg[0], edge_marg[0])


def masked_log_sum(pot: ChainPotentials, latent_map: LatentMap, labels) -> float:
    """Log of the summed exp-score over latent paths consistent with ``labels``."""
    labels = np.asarray(labels)
    if labels.shape != (pot.length,):
        raise ContractError("labels must have one entry per frame")
    if latent_map.n_latent != pot.n_latent:
        raise ContractError("latent map does not match the potentials")
    node = pot.node_scores + label_mask(latent_map, labels)
    log_z, _, _ = chain_tables(node[None], pot.edge_scores, np.array([pot.length]))
    return float(log_z[0])


def label_posteriors(tables: PosteriorTables, latent_map: LatentMap) -> np.ndarray:
    """(T, n_labels) matrix of per-frame label probabilities."""
    marg = tables.node_marginals
    if marg.shape[-1] != latent_map.n_latent:
        raise ContractError("latent map does not match the posterior tables")
    return np.add.reduceat(marg, list(latent_map.offsets), axis=-1)


def _padded(samples: Sequence[SequenceSample], feature_dim: int):
    lengths = np.array([len(s) for s in samples])
    T = int(lengths.max())
    x = np.zeros((len(samples), T, feature_dim + 1))
    y = np.zeros((len(samples), T), dtype=np.int64)
    for i, s in enumerate(samples):
        if s.feature_dim != feature_dim:
            raise ContractError(
                f"sample {s.id!r} has {s.feature_dim} features, expected {feature_dim}"
            )
        x[i, : len(s)] = augment(s.features)
        y[i, : len(s)] = s.labels
    return x, y, lengths


def predict_many(
    params: ModelParams, latent_map: LatentMap, samples: Sequence[SequenceSample]
) -> list[np.ndarray]:
    """Marginal decoding for several samples at once."""
    params.check_compatible(latent_map, params.feature_dim)
    x, _, lengths = _padded(samples, params.feature_dim)
    _, node_marg, _ = chain_tables(x @ params.emission.T, params.transition, lengths)
    post = np.add.reduceat(node_marg, list(latent_map.offsets), axis=-1)
    # argmax returns the first maximum, i.e. ties go to the lowest label
    best = np.argmax(post, axis=-1)
    return [best[i, :n].copy() for i, n in enumerate(lengths)]


def predict(params: ModelParams, latent_map: LatentMap, sample: SequenceSample) -> np.ndarray:
    return predict_many(params, latent_map, [sample])[0]
