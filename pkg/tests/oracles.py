"""Independent reference implementations used only by the tests.

Nothing here imports the package's inference or training code: the
enumeration oracle sums over every latent path explicitly, and the plain
linear-chain CRF has its own per-sequence forward-backward over label states.
"""
from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp


def path_scores(node, edge):
    """Yield (path, score) for every path through a (T, H) chain."""
    T, H = node.shape
    for path in itertools.product(range(H), repeat=T):
        score = sum(node[t, h] for t, h in enumerate(path))
        score += sum(edge[a, b] for a, b in zip(path[:-1], path[1:]))
        yield path, score


def enumerate_chain(node, edge, owner=None, labels=None):
    """Brute-force log Z, node/edge marginals and (optionally) masked log-sum."""
    T, H = node.shape
    paths, scores = zip(*path_scores(node, edge))
    scores = np.array(scores)
    log_z = logsumexp(scores)
    probs = np.exp(scores - log_z)
    node_marg = np.zeros((T, H))
    edge_marg = np.zeros((max(T - 1, 0), H, H))
    for path, p in zip(paths, probs):
        for t, h in enumerate(path):
            node_marg[t, h] += p
        for t in range(1, T):
            edge_marg[t - 1, path[t - 1], path[t]] += p
    out = {"log_z": log_z, "node": node_marg, "edge": edge_marg}
    if owner is not None:
        n_labels = int(max(owner)) + 1
        label_marg = np.zeros((T, n_labels))
        for path, p in zip(paths, probs):
            for t, h in enumerate(path):
                label_marg[t, owner[h]] += p
        out["labels"] = label_marg
        if labels is not None:
            keep = [i for i, path in enumerate(paths)
                    if all(owner[h] == y for h, y in zip(path, labels))]
            out["masked"] = logsumexp(scores[keep]) if keep else -np.inf
    return out


def comp_measure_naive(groups, ordered=False):
    """Double-loop reference for the per-label summed pairwise distance.

    ``groups`` is a list (one entry per label) of lists of (T, d) arrays.
    """
    raw = []
    for items in groups:
        length = max(len(x) for x in items)
        resampled = []
        for x in items:
            x = np.asarray(x, dtype=float)
            pos = np.linspace(0, len(x) - 1, length)
            resampled.append(np.column_stack(
                [np.interp(pos, np.arange(len(x)), x[:, j]) for j in range(x.shape[1])]))
        # fsum gives the correctly rounded sum, independent of order
        frame_terms = []
        for i in range(len(resampled)):
            for j in range(len(resampled)):
                if i == j or (not ordered and j < i):
                    continue
                a, b = resampled[i], resampled[j]
                for t in range(length):
                    frame_terms.append(float(np.sqrt(np.sum((a[t] - b[t]) ** 2))))
        raw.append(math.fsum(frame_terms))
    s = math.fsum(raw)
    return [r / s for r in raw] if s > 0 else [1 / len(raw)] * len(raw), raw


def best_composition(total, profile, cap, strict=False):
    """Exhaustive minimum L1 distance between count shares and a profile."""
    n = len(profile)
    best = None
    for cuts in itertools.combinations(range(1, total), n - 1):
        parts = np.diff((0,) + cuts + (total,))
        shares = parts / total
        if n > 1 and np.any(shares > cap if not strict else shares >= cap):
            continue
        gap = float(np.abs(shares - np.asarray(profile)).sum())
        if best is None or gap < best[0] - 1e-12:
            best = (gap, tuple(int(p) for p in parts))
    return best


def _lse(a, axis):
    # scipy's logsumexp has too much per-call overhead for a per-frame loop;
    # the inputs here are always finite
    m = a.max(axis=axis)
    return m + np.log(np.exp(a - np.expand_dims(m, axis)).sum(axis=axis))


class PlainCRF:
    """Linear-chain CRF over labels with per-frame linear emissions and a bias."""

    def __init__(self, n_labels, feature_dim, l2):
        self.K, self.d, self.l2 = n_labels, feature_dim, l2

    def _unpack(self, theta):
        k = self.K * (self.d + 1)
        return theta[:k].reshape(self.K, self.d + 1), theta[k:].reshape(self.K, self.K)

    def _forward_backward(self, x, W, A):
        T = len(x)
        xb = np.hstack([x, np.ones((T, 1))])
        node = xb @ W.T
        alpha = np.zeros((T, self.K))
        beta = np.zeros((T, self.K))
        alpha[0] = node[0]
        for t in range(1, T):
            alpha[t] = node[t] + _lse(alpha[t - 1][:, None] + A, axis=0)
        for t in range(T - 2, -1, -1):
            beta[t] = _lse(A + (node[t + 1] + beta[t + 1])[None, :], axis=1)
        log_z = logsumexp(alpha[-1])
        marg = np.exp(alpha + beta - log_z)
        pair = np.exp(alpha[:-1, :, None] + A + (node[1:] + beta[1:])[:, None, :] - log_z)
        return xb, node, log_z, marg, pair

    def objective(self, theta, data):
        W, A = self._unpack(theta)
        nll, gW, gA = 0.0, np.zeros_like(W), np.zeros_like(A)
        for x, y in data:
            xb, node, log_z, marg, pair = self._forward_backward(x, W, A)
            gold = node[np.arange(len(y)), y].sum() + A[y[:-1], y[1:]].sum()
            nll += log_z - gold
            gW += marg.T @ xb
            gA += pair.sum(axis=0)
            np.subtract.at(gW, y, xb)
            np.subtract.at(gA, (y[:-1], y[1:]), 1.0)
        nll += 0.5 * self.l2 * theta @ theta
        grad = np.concatenate([gW.ravel(), gA.ravel()]) + self.l2 * theta
        return nll, grad

    def fit(self, data, start, tol=1e-9, maxiter=2000):
        res = minimize(self.objective, start, args=(data,), jac=True, method="L-BFGS-B",
                       options={"gtol": tol, "ftol": 1e-15, "maxiter": maxiter})
        self.theta = res.x
        return res.fun

    def predict(self, x):
        W, A = self._unpack(self.theta)
        _, _, _, marg, _ = self._forward_backward(x, W, A)
        return np.argmax(marg, axis=1)
