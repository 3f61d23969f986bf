"""Log partial likelihood, score, and observed information.

Three variants share one prepared design:

* ``pairwise`` - strictly single-receiver events;
* ``approx_multicast`` - duplication: a size-L event contributes L times the
  single-receiver normalizer;
* ``exact_multicast`` - the size-L normalizer is the degree-L elementary
  symmetric polynomial of the risk-set weights, evaluated with its first two
  coefficient derivatives by one dynamic-programming sweep.

The production path never materializes the full design: per event it
combines class-level baseline quantities with the sparse dynamic
corrections (the ratio of baseline to corrected normalizer and the sparse
selection-probability corrections).  A dense per-event oracle with no
decomposition is kept alongside for verification.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

from .design import prepare
from .events import StreamError

VARIANTS = ("pairwise", "exact_multicast", "approx_multicast")

_Z_CAP = 700.0  # exp() overflow guard for dynamic log-weight corrections


class DegenerateSenderError(StreamError):
    """Effective risk set carries zero total weight."""


@dataclass
class LikelihoodReport:
    logpl: float
    score: np.ndarray | None = None
    info: np.ndarray | None = None
    terms: np.ndarray | None = None
    n_events: int = 0
    n_decisions: int = 0


@dataclass
class SenderSnapshot:
    """Per-sender selection state at one instant.

    pi(j) = gamma * pi0(j) + delta_pi.get(j, 0) is the probability that a
    single selection by this sender lands on j.
    """

    sender: int
    t: float
    gamma: float
    delta_pi: dict
    log_w0: float
    pi0: np.ndarray
    E0: np.ndarray
    V0: np.ndarray
    log_w: float

    def pi(self, j):
        return self.gamma * self.pi0[j] + self.delta_pi.get(j, 0.0)

    def pi_vector(self):
        out = self.gamma * self.pi0.copy()
        for j, d in self.delta_pi.items():
            out[j] += d
        return out


def weight(beta, x, in_risk=True):
    """exp(beta . x) if the receiver is eligible, else 0."""
    if not in_risk:
        return 0.0
    return float(np.exp(np.dot(beta, x)))


# ---------------------------------------------------------------------------
# class-level baseline quantities

def _class_tables(design, beta, order):
    """Per sender class: log normalizer, selection probabilities over all
    actors, and first two moments of the design under them."""
    X0 = design.static._x0                       # (C, A, p)
    s0 = X0 @ beta                               # (C, A)
    m0 = s0.max(axis=1)
    pi0 = np.exp(s0 - m0[:, None])
    Z = pi0.sum(axis=1)
    logW0 = m0 + np.log(Z)
    pi0 /= Z[:, None]
    E0 = A0 = None
    if order >= 1:
        E0 = np.einsum("ca,cap->cp", pi0, X0)
    if order >= 2:
        A0 = np.einsum("ca,cap,caq->cpq", pi0, X0, X0)
    return logW0, pi0, E0, A0


def _row_caches(design):
    """Beta-independent gather indices for the flat rows (cached)."""
    cached = getattr(design, "_row_caches", None)
    if cached is None:
        flat = design.row_class * design.actor_count + design.row_j
        off = np.flatnonzero(~design.row_inrisk)
        Lf = design.ev_size.astype(np.float64)
        cached = design._row_caches = (flat, off, Lf)
    return cached


def _segment_sums(values, starts, n):
    if values.shape[0] == 0:
        return np.zeros((n,) + values.shape[1:])
    return np.add.reduceat(values, starts[:-1], axis=0)


_tls = threading.local()


def _scratch(key, shape):
    """Reusable thread-local work array (large temporaries churn the
    allocator badly enough to dominate the evaluation otherwise)."""
    pool = getattr(_tls, "pool", None)
    if pool is None:
        pool = _tls.pool = {}
    buf = pool.get(key)
    if buf is None or buf.shape != shape:
        buf = pool[key] = np.empty(shape)
    return buf


def evaluate(design, beta, variant="approx_multicast", order=2,
             keep_terms=False):
    """Evaluate logpl (order 0), plus score (1) and information (2)."""
    beta = np.asarray(beta, dtype=np.float64)
    if beta.shape != (design.p,):
        raise ValueError(f"beta must have length {design.p}")
    if variant == "pairwise":
        if (design.ev_size != 1).any():
            raise StreamError("pairwise variant requires singleton receiver sets")
        return _eval_sparse(design, beta, order, keep_terms)
    if variant == "approx_multicast":
        return _eval_sparse(design, beta, order, keep_terms)
    if variant == "exact_multicast":
        return _eval_exact(design, beta, order, keep_terms)
    raise ValueError(f"unknown variant {variant!r}")


#: Normalizer-ratio floor below which baseline-plus-correction cancellation
#: costs too many digits; such events fall back to direct evaluation.
_RHO_FLOOR = 1e-3


def _rescue_event(design, beta, m, order):
    """Direct evaluation of one event's normalizer and moments."""
    X = design.dense_x(m)
    mask = design.risk_mask(m)
    s = X @ beta
    s[~mask] = -np.inf
    cmax = s.max()
    if not np.isfinite(cmax):
        raise DegenerateSenderError(f"empty risk set at event {m}")
    w = np.exp(s - cmax)
    w[~mask] = 0.0
    W = w.sum()
    if W <= 0.0:
        raise DegenerateSenderError(
            f"zero effective risk-set weight at event {m}")
    logW = cmax + np.log(W)
    if order < 1:
        return logW, None, None
    pi = w / W
    E = X.T @ pi
    if order < 2:
        return logW, E, None
    A = X.T @ (pi[:, None] * X)
    return logW, E, A


def _eval_sparse(design, beta, order, keep_terms):
    n = design.n_events
    R, p = design.dX.shape
    flat_idx, offrisk, L = _row_caches(design)
    logW0, pi0, E0, A0 = _class_tables(design, beta, order)

    # row weights relative to the class baseline, in preallocated scratch
    z = _scratch("z", (R,))
    np.dot(design.dX, beta, out=z)
    np.clip(z, -_Z_CAP, _Z_CAP, out=z)
    expz = np.exp(z, out=z)
    expz[offrisk] = 0.0
    pi0row = np.take(pi0.ravel(), flat_idx, out=_scratch("pi0row", (R,)))
    delta = np.subtract(expz, 1.0, out=_scratch("delta", (R,)))
    np.multiply(delta, pi0row, out=delta)          # Delta w / W_0
    rho = 1.0 + _segment_sums(delta, design.row_start, n)

    # Events whose corrections cancel most of the baseline weight lose
    # precision in W_0 + sum(Delta w); evaluate those few directly.  Their
    # gamma is zeroed so every sparse-row contribution vanishes below.
    ok = rho >= _RHO_FLOOR
    rescued = {int(m): _rescue_event(design, beta, int(m), order)
               for m in np.flatnonzero(~ok)}
    gamma = np.where(ok, 1.0 / np.where(ok, rho, 1.0), 0.0)
    logW = logW0[design.ev_class] + np.log(np.where(ok, rho, 1.0))
    for m, (lw, _, _) in rescued.items():
        logW[m] = lw

    terms = design.xsum @ beta - L * logW
    logpl = float(terms.sum())
    report = LikelihoodReport(logpl, n_events=n,
                              n_decisions=design.n_decisions,
                              terms=terms if keep_terms else None)
    if order < 1:
        return report

    grow = np.take(gamma, design.row_ev, out=_scratch("grow", (R,)))
    dpi = np.multiply(delta, grow, out=delta)      # Delta pi rows
    pirow = np.multiply(pi0row, expz, out=pi0row)  # pi at sparse rows
    np.multiply(pirow, grow, out=pirow)
    x0rows = design.x0_rows()
    buf = _scratch("rows_a", (R, p))
    buf2 = _scratch("rows_b", (R, p))
    np.multiply(x0rows, dpi[:, None], out=buf)
    np.multiply(design.dX, pirow[:, None], out=buf2)
    buf += buf2
    E = gamma[:, None] * E0[design.ev_class]
    E += _segment_sums(buf, design.row_start, n)
    for m, (_, Em, _) in rescued.items():
        E[m] = Em
    report.score = design.xsum.sum(axis=0) - L @ E
    if order < 2:
        return report

    Lrow = np.take(L, design.row_ev, out=_scratch("Lrow", (R,)))
    np.multiply(dpi, Lrow, out=dpi)
    np.multiply(pirow, Lrow, out=pirow)
    np.multiply(x0rows, dpi[:, None], out=buf)
    M = buf.T @ x0rows
    np.multiply(x0rows, pirow[:, None], out=buf)
    C = buf.T @ design.dX
    M += C + C.T
    np.multiply(design.dX, pirow[:, None], out=buf)
    M += buf.T @ design.dX
    cls_mass = np.bincount(design.ev_class, weights=L * gamma,
                           minlength=design.static.n_classes)
    M += np.einsum("c,cpq->pq", cls_mass, A0)
    for m, (_, _, Am) in rescued.items():
        M += L[m] * Am
    M -= E.T @ (L[:, None] * E)
    report.info = 0.5 * (M + M.T)
    return report


def _eval_exact(design, beta, order, keep_terms, l_max=6):
    n = design.n_events
    A = design.actor_count
    p = design.p
    sizes = design.ev_size
    Lmax = int(sizes.max())
    if Lmax > l_max:
        raise StreamError(f"receiver-set size {Lmax} exceeds limit {l_max}")
    in_risk_count = design.ev_risk
    if (sizes > in_risk_count).any():
        bad = int(np.argmax(sizes > in_risk_count))
        raise StreamError(
            f"event {bad}: {sizes[bad]} receivers exceed risk set of "
            f"{in_risk_count[bad]}")

    s0 = design.static._x0 @ beta                  # (C, A)
    S = s0[design.ev_class].copy()                 # (n, A)
    z = design.dX @ beta if p else np.zeros(len(design.row_j))
    S[design.row_ev, design.row_j] += np.clip(z, -_Z_CAP, _Z_CAP)
    mask = np.ones((n, A), dtype=bool)
    off = ~design.row_inrisk
    mask[design.row_ev[off], design.row_j[off]] = False
    S[~mask] = -np.inf
    c = S.max(axis=1)
    w = np.exp(S - c[:, None])
    w[~mask] = 0.0

    e = np.zeros((Lmax + 1, n))
    e[0] = 1.0
    G = np.zeros((Lmax + 1, n, p)) if order >= 1 else None
    H = np.zeros((Lmax + 1, n, p, p)) if order >= 2 else None
    if order >= 1:
        X0d = design.static._x0[design.ev_class].copy()   # (n, A, p)
        X0d[design.row_ev, design.row_j] += design.dX
    for r in range(A):
        wr = w[:, r]
        if order >= 1:
            xr = X0d[:, r, :]
        for l in range(Lmax, 0, -1):
            if order >= 2:
                H[l] += wr[:, None, None] * (
                    H[l - 1]
                    + xr[:, :, None] * G[l - 1][:, None, :]
                    + G[l - 1][:, :, None] * xr[:, None, :]
                    + e[l - 1][:, None, None]
                    * (xr[:, :, None] * xr[:, None, :]))
            if order >= 1:
                G[l] += wr[:, None] * (G[l - 1] + e[l - 1][:, None] * xr)
            e[l] += wr * e[l - 1]

    rows = np.arange(n)
    eL = e[sizes, rows]
    if (eL <= 0).any():
        bad = int(np.argmax(eL <= 0))
        raise DegenerateSenderError(
            f"zero size-{sizes[bad]} normalizer at event {bad}")
    logW = sizes * c + np.log(eL)
    terms = design.xsum @ beta - logW
    logpl = float(terms.sum())
    report = LikelihoodReport(logpl, n_events=n,
                              n_decisions=design.n_decisions,
                              terms=terms if keep_terms else None)
    if order < 1:
        return report
    E = G[sizes, rows] / eL[:, None]
    report.score = (design.xsum - E).sum(axis=0)
    if order < 2:
        return report
    V = H[sizes, rows] / eL[:, None, None] - E[:, :, None] * E[:, None, :]
    M = V.sum(axis=0)
    report.info = 0.5 * (M + M.T)
    return report


def dense_oracle(design, beta, variant="approx_multicast", order=2):
    """No-decomposition reference: per event, assemble the full design and
    sum directly.  Exact-multicast normalizers come from the per-event
    subset recurrences without any class/sparsity bookkeeping."""
    from .esp import esp_grad_hess

    beta = np.asarray(beta, dtype=np.float64)
    n = design.n_events
    p = design.p
    logpl = 0.0
    score = np.zeros(p)
    info = np.zeros((p, p))
    for m in range(n):
        X = design.dense_x(m)
        mask = design.risk_mask(m)
        s = X @ beta
        s[~mask] = -np.inf
        cmax = s.max()
        w = np.exp(s - cmax)
        w[~mask] = 0.0
        L = int(design.ev_size[m])
        if variant in ("pairwise", "approx_multicast"):
            W = w.sum()
            logW = cmax + np.log(W)
            pi = w / W
            logpl += design.xsum[m] @ beta - L * logW
            if order >= 1:
                E = X.T @ pi
                score += design.xsum[m] - L * E
            if order >= 2:
                info += L * (X.T @ (pi[:, None] * X) - np.outer(E, E))
        else:
            S0, S1, S2 = esp_grad_hess(w, X, L)
            logpl += design.xsum[m] @ beta - (L * cmax + np.log(S0))
            if order >= 1:
                E = S1 / S0
                score += design.xsum[m] - E
            if order >= 2:
                info += S2 / S0 - np.outer(E, E)
    return LikelihoodReport(float(logpl),
                            score if order >= 1 else None,
                            0.5 * (info + info.T) if order >= 2 else None,
                            n_events=n, n_decisions=design.n_decisions)


def selection_probabilities(design, beta):
    """(n, A) matrix of single-selection probabilities per event, zero for
    receivers outside the risk set."""
    beta = np.asarray(beta, dtype=np.float64)
    s0 = design.static._x0 @ beta
    S = s0[design.ev_class].copy()
    z = design.dX @ beta if design.p else np.zeros(len(design.row_j))
    S[design.row_ev, design.row_j] += np.clip(z, -_Z_CAP, _Z_CAP)
    off = ~design.row_inrisk
    S[design.row_ev[off], design.row_j[off]] = -np.inf
    peak = S.max(axis=1)
    if not np.isfinite(peak).all():
        bad = int(np.argmax(~np.isfinite(peak)))
        raise DegenerateSenderError(f"empty risk set at event {bad}")
    S -= peak[:, None]
    w = np.exp(S)
    w /= w.sum(axis=1)[:, None]
    return w


# ---------------------------------------------------------------------------
# spec-level convenience entry points

def log_partial_likelihood(beta, stream, spec, traits=None, policy=None):
    design = prepare(stream, spec, traits, policy)
    return evaluate(design, beta, "pairwise")


def approx_multicast_logpl(beta, stream, spec, traits=None, policy=None):
    design = prepare(stream, spec, traits, policy)
    return evaluate(design, beta, "approx_multicast")


def exact_multicast_logpl(beta, stream, spec, traits=None, policy=None):
    design = prepare(stream, spec, traits, policy)
    return evaluate(design, beta, "exact_multicast")


def sender_snapshot(beta, state, static, t, i, policy=None, excluded=None):
    """Selection state for sender i at time t under the sparse
    baseline-plus-correction bookkeeping."""
    beta = np.asarray(beta, dtype=np.float64)
    A = static._x0.shape[1]
    if excluded is None:
        if policy is None:
            excluded = {i}
        else:
            excluded = set(np.flatnonzero(~policy.mask(t, i, A)).tolist())
    c = static.class_of[i]
    X0 = static.x0(c)
    s0 = X0 @ beta
    m0 = s0.max()
    pi0 = np.exp(s0 - m0)
    Z = pi0.sum()
    logW0 = m0 + np.log(Z)
    pi0 /= Z
    E0 = X0.T @ pi0
    V0 = X0.T @ (pi0[:, None] * X0) - np.outer(E0, E0)

    js, dx = state.delta_rows(t, i)
    rows = {j: dx[r] for r, j in enumerate(js)}
    for j in excluded:
        rows.setdefault(j, np.zeros(static._x0.shape[2]))
    rho = 1.0
    raw = {}
    for j, d in rows.items():
        mult = 0.0 if j in excluded else float(np.exp(np.clip(d @ beta, -_Z_CAP, _Z_CAP)))
        raw[j] = pi0[j] * (mult - 1.0)
        rho += raw[j]
    if rho <= 1e-12:
        raise DegenerateSenderError(f"sender {i} has empty effective risk set at t={t}")
    gamma = 1.0 / rho
    delta_pi = {j: v * gamma for j, v in raw.items()}
    return SenderSnapshot(sender=i, t=t, gamma=gamma, delta_pi=delta_pi,
                          log_w0=logW0, pi0=pi0, E0=E0, V0=V0,
                          log_w=logW0 + np.log(rho))


@dataclass
class GrowthSequence:
    """Cumulative multicast mass 1{|J|>1} / |risk set| per event index."""

    g: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def final(self):
        return float(self.g[-1]) if len(self.g) else 0.0


def growth_sequence(stream, policy=None):
    from .events import RiskSetPolicy

    policy = policy or RiskSetPolicy()
    inc = []
    for ev in stream:
        if ev.size > 1:
            risk = len(policy.risk_set(ev.time, ev.sender, stream.actor_count))
            inc.append(1.0 / risk)
        else:
            inc.append(0.0)
    return GrowthSequence(np.cumsum(inc))


def dump_terms(design, beta, variant, path):
    """Write per-event log-likelihood terms as csv (debug aid)."""
    rep = evaluate(design, beta, variant, order=0, keep_terms=True)
    with open(path, "w") as fh:
        fh.write("event_index,sender,logterm\n")
        for m, term in enumerate(rep.terms):
            fh.write(f"{m},{design.ev_sender[m]},{term!r}\n")
    return rep
