"""Elementary symmetric polynomials and fixed-size weighted subset sampling.

e_L(w) over a weight vector equals the sum over all size-L subsets of the
product of member weights; it normalizes the multicast selection law, whose
first two log-derivatives in the coefficient vector are subset means and
covariances of covariate sums.  Everything here works on one weight vector;
the batched DP used by the likelihood lives with the likelihood code.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


def esp_values(w, L):
    """e_0..e_L of the weights, by the one-pass triangular recurrence."""
    w = np.asarray(w, dtype=np.float64)
    e = np.zeros(L + 1)
    e[0] = 1.0
    for x in w:
        e[1:] = e[1:] + x * e[:-1]
    return e


def esp_grad_hess(w, X, L):
    """(e_L, gradient, Hessian) of the subset-sum generating sums.

    Returns S0 = e_L(w), S1 = sum over size-L subsets of w(A) X(A), and
    S2 = sum of w(A) X(A) X(A)^T, with w(A) the product of member weights
    and X(A) the sum of member rows of X.  Mean and covariance of X(A)
    under the fixed-size law follow as S1/S0 and S2/S0 - (S1/S0)^2.
    """
    w = np.asarray(w, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    p = X.shape[1]
    e = np.zeros(L + 1)
    G = np.zeros((L + 1, p))
    H = np.zeros((L + 1, p, p))
    e[0] = 1.0
    for wr, xr in zip(w, X):
        if wr == 0.0:
            continue
        for l in range(L, 0, -1):
            H[l] += wr * (H[l - 1] + np.outer(xr, G[l - 1])
                          + np.outer(G[l - 1], xr)
                          + e[l - 1] * np.outer(xr, xr))
            G[l] += wr * (G[l - 1] + e[l - 1] * xr)
            e[l] += wr * e[l - 1]
    return e[L], G[L], H[L]


def subset_moments(w, X, L):
    """Mean and covariance of the covariate sum over size-L subsets drawn
    with probability proportional to the product of weights."""
    S0, S1, S2 = esp_grad_hess(w, X, L)
    if S0 <= 0:
        raise ValueError("no feasible subsets of the requested size")
    mean = S1 / S0
    cov = S2 / S0 - np.outer(mean, mean)
    return S0, mean, cov


def enumerate_subset_law(w, L):
    """Explicit (subset, probability) enumeration; test oracle only."""
    w = np.asarray(w, dtype=np.float64)
    idx = np.arange(len(w))
    subsets = list(itertools.combinations(idx, L))
    mass = np.array([np.prod(w[list(s)]) for s in subsets])
    total = mass.sum()
    return subsets, mass / total


def inclusion_probabilities(w, L):
    """P(j in A) under the fixed-size law: w_j e_{L-1}(w without j) / e_L."""
    w = np.asarray(w, dtype=np.float64)
    scale = w.max()
    if scale <= 0:
        raise ValueError("all weights zero")
    ws = w / scale
    e = esp_values(ws, L)
    out = np.zeros(len(w))
    for j, x in enumerate(ws):
        # leave-one-out ESPs by deflation: e_l(-j) = e_l - x * e_{l-1}(-j)
        eminus = np.zeros(L)
        eminus[0] = 1.0
        for l in range(1, L):
            eminus[l] = e[l] - x * eminus[l - 1]
        out[j] = x * eminus[L - 1] / e[L]
    return out


def sample_fixed_size(w, L, rng, method="dp"):
    """Draw a size-L subset with probability proportional to the product of
    its weights (exact fixed-size law).

    method "dp" walks the items once, including each with probability
    w_j e_{L-q'}(rest) ratios from suffix ESP tables; "enumerate" draws from
    the explicit law and is only sensible for small instances.
    """
    w = np.asarray(w, dtype=np.float64)
    if (w < 0).any():
        raise ValueError("negative weight")
    support = int((w > 0).sum())
    if L > support:
        raise ValueError(f"cannot draw {L} items from {support} with positive weight")
    if L == support:
        return sorted(np.flatnonzero(w > 0).tolist())
    if method == "enumerate":
        if math.comb(len(w), L) > 10 ** 4:
            raise ValueError("enumeration fallback limited to 10^4 subsets")
        subsets, probs = enumerate_subset_law(w, L)
        return sorted(subsets[rng.choice(len(subsets), p=probs)])
    if method != "dp":
        raise ValueError(f"unknown method {method!r}")

    ws = w / w.max()
    R = len(ws)
    # suffix[r, l] = e_l(ws[r:]), built right to left
    suffix = np.zeros((R + 1, L + 1))
    suffix[:, 0] = 1.0
    for r in range(R - 1, -1, -1):
        suffix[r, 1:] = suffix[r + 1, 1:] + ws[r] * suffix[r + 1, :-1]
    chosen = []
    q = L
    for r in range(R):
        if q == 0:
            break
        if suffix[r + 1, q] == 0.0:
            # all remaining positive-weight items are forced
            p_in = 1.0
        else:
            p_in = ws[r] * suffix[r + 1, q - 1] / suffix[r, q]
        if rng.random() < p_in:
            chosen.append(r)
            q -= 1
    return chosen


def sample_exponential_keys(w, L, rng):
    """Weighted draw without replacement by exponential order statistics:
    key_j = Exp(1)/w_j, take the L smallest (successive-sampling law)."""
    w = np.asarray(w, dtype=np.float64)
    support = int((w > 0).sum())
    if L > support:
        raise ValueError(f"cannot draw {L} items from {support} with positive weight")
    with np.errstate(divide="ignore"):
        keys = rng.standard_exponential(len(w)) / w
    order = np.argsort(keys, kind="stable")
    return sorted(order[:L].tolist())
