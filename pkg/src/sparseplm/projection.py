"""Euclidean projections onto the feasible sets of both formulations.

The relaxed set is a plain box: |beta_j| <= C entrywise, |W entries| <= 1.
The exact set adds a cardinality cap on the network weights: at most s
nonzeros across all layers, each in [-1, 1].  Projection onto that set has a
closed form: score every coordinate by how much squared distance keeping it
saves, keep the s best, clip the survivors.
"""

import numpy as np

from .network import WeightStack

DEBUG_CHECKS = False


def clip_box(values, bound):
    """Clip entrywise into [-bound, bound]."""
    return np.clip(values, -bound, bound)


def project_box_beta(beta, bound):
    """Nearest point of the beta box."""
    return clip_box(np.asarray(beta, dtype=float), float(bound))


def benefit(entries):
    """Squared-distance saving from keeping each coordinate vs zeroing it.

    For |g| <= 1 the kept coordinate costs 0 instead of g^2; beyond the box it
    costs (|g| - 1)^2 instead of g^2, a saving of 2|g| - 1.
    """
    a = np.abs(np.asarray(entries, dtype=float))
    return np.where(a <= 1.0, a * a, 2.0 * a - 1.0)


def _top_s_mask(delta, s):
    """Boolean mask of the s largest scores, ties broken toward lower index.

    Scores of zero never enter the support: keeping a zero coordinate saves
    nothing, and leaving it out keeps supports canonical.
    """
    m = delta.size
    keep = np.zeros(m, dtype=bool)
    if s <= 0:
        return keep
    positive = int(np.count_nonzero(delta > 0.0))
    s = min(s, positive)
    if s == 0:
        return keep
    if s == m:
        keep[:] = delta > 0.0
        return keep
    part = np.argpartition(delta, m - s)
    thresh = delta[part[m - s]]
    keep[delta > thresh] = True
    room = s - int(np.count_nonzero(keep))
    if room > 0:
        at = np.flatnonzero(delta == thresh)
        keep[at[:room]] = True
    return keep


def sparse_box_project(entries, s):
    """Project a flat vector onto {at most s nonzeros, every entry in [-1, 1]}.

    Ties in the keep-score are broken by index order so the result is a
    deterministic function of the input.
    """
    g = np.asarray(entries, dtype=float)
    delta = benefit(g)
    keep = _top_s_mask(delta, int(s))
    out = np.where(keep, np.clip(g, -1.0, 1.0), 0.0)
    if DEBUG_CHECKS:
        direct = float(np.sum((out - g) ** 2))
        shortcut = float(np.sum(g * g) - np.sum(delta[keep]))
        assert abs(direct - shortcut) <= 1e-9 * (1.0 + abs(direct)), \
            "projection distance identity violated"
    return out


def project_sparse_box(weights, s):
    """Sparse-box projection of a weight stack, layer shapes preserved."""
    flat = np.concatenate([W.ravel() for W in weights.layers])
    flat = sparse_box_project(flat, s)
    out, pos = [], 0
    for W in weights.layers:
        out.append(flat[pos:pos + W.size].reshape(W.shape))
        pos += W.size
    return WeightStack(out)


def project_relaxed(theta):
    """Box projection of (beta, W) in place of nothing: returns a new PlmParams."""
    out = theta.copy()
    out.beta = project_box_beta(out.beta, out.beta_bound)
    for W in out.weights.layers:
        np.clip(W, -1.0, 1.0, out=W)
    return out


def project_exact(theta, s):
    """Projection onto the cardinality-constrained feasible set."""
    out = theta.copy()
    out.beta = project_box_beta(out.beta, out.beta_bound)
    out.weights = project_sparse_box(out.weights, s)
    return out
