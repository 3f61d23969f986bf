"""Model-faithful event-stream generation.

Between events, every pairwise weight is constant except when a past record
crosses an age-bin boundary, so the process is simulated exactly: draw an
exponential waiting time at the current total rate, and if it overshoots
the next bin-crossing epoch, move to the epoch, refresh the affected
weights, and redraw (memorylessness keeps this exact).  At an event, the
sender and set size are drawn proportional to their per-size rates and the
receiver set by an exact fixed-size weighted draw.

The per-size baseline factorizes as rate(i) * size_weight(L); this is a
simulation choice, echoed in the ground-truth metadata, not a constraint of
the fitted model.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import esp
from .covariates import CovariateSpec, DynamicState, StaticDesign
from .events import Event, EventStream, RiskSetPolicy, StreamError


@dataclass
class SimConfig:
    actor_count: int
    beta_true: np.ndarray
    spec: CovariateSpec
    seed: int = 0
    baseline: float | np.ndarray = 1.0
    size_weights: dict = field(default_factory=lambda: {1: 1.0})
    n_events: int | None = None
    horizon: float | None = None
    traits: object = None
    policy: RiskSetPolicy = None

    def __post_init__(self):
        if self.n_events is None and self.horizon is None:
            raise StreamError("need a target event count or a horizon")
        sizes = sorted(self.size_weights)
        if not sizes or sizes[0] < 1:
            raise StreamError("set sizes must be positive")
        if any(q < 0 for q in self.size_weights.values()):
            raise StreamError("size weights must be nonnegative")
        self.beta_true = np.asarray(self.beta_true, dtype=np.float64)
        if self.beta_true.shape != (self.spec.dim,):
            raise StreamError("beta_true length does not match the covariate spec")

    @property
    def l_max(self):
        return max(self.size_weights)

    def baseline_vector(self):
        lam = np.broadcast_to(np.asarray(self.baseline, dtype=np.float64),
                              (self.actor_count,)).copy()
        if (lam < 0).any():
            raise StreamError("baseline rates must be nonnegative")
        return lam

    def with_seed(self, seed):
        return replace(self, seed=seed)

    def to_json(self):
        return {
            "actor_count": self.actor_count,
            "beta_true": self.beta_true.tolist(),
            "covariates": self.spec.to_json(),
            "seed": self.seed,
            "baseline": np.asarray(self.baseline).tolist(),
            "size_weights": {str(k): v for k, v in self.size_weights.items()},
            "n_events": self.n_events,
            "horizon": self.horizon,
            "baseline_factorized": True,
        }

    @classmethod
    def from_json(cls, obj, traits=None):
        return cls(actor_count=obj["actor_count"],
                   beta_true=np.asarray(obj["beta_true"]),
                   spec=CovariateSpec.from_json(obj["covariates"]),
                   seed=obj.get("seed", 0),
                   baseline=np.asarray(obj.get("baseline", 1.0)),
                   size_weights={int(k): float(v) for k, v in
                                 obj.get("size_weights", {"1": 1.0}).items()},
                   n_events=obj.get("n_events"),
                   horizon=obj.get("horizon"),
                   traits=traits)


def sample_receiver_set(weights, L, rng, method="dp"):
    """Size-L receiver set with probability proportional to the product of
    the member weights (the exact fixed-size law)."""
    return esp.sample_fixed_size(weights, L, rng, method=method)


#: Hard ceiling on the log total intensity; beyond this the configuration
#: has run away (self-excitation too strong) and simulation stops honestly.
_LOG_RATE_CAP = 500.0


class _Engine:
    def __init__(self, config):
        self.config = config
        A = config.actor_count
        spec = config.spec
        self.static = StaticDesign(spec, config.traits, A)
        self.state = DynamicState(spec, A)
        policy = config.policy or RiskSetPolicy()
        if policy.mode == "callback":
            raise StreamError("simulation supports static risk policies only")
        self.mask = np.vstack([policy.mask(0.0, i, A) for i in range(A)])
        self.lam = config.baseline_vector()
        self.sizes = np.array(sorted(config.size_weights))
        self.qvec = np.array([config.size_weights[s] for s in self.sizes])
        risk_sizes = self.mask.sum(axis=1)
        if (self.sizes.max() > risk_sizes[self.lam > 0]).any():
            raise StreamError("a set size exceeds an active sender's risk set")
        beta = config.beta_true
        self.logw = np.einsum("cap,p->ca",
                              self.static._x0, beta)[self.static.class_of]
        self.logw[~self.mask] = -np.inf
        with np.errstate(divide="ignore"):
            self.logbase = (np.log(self.lam)[:, None]
                            + np.log(self.qvec)[None, :])
        self.logS = np.zeros((A, len(self.sizes)))
        for i in range(A):
            self._refresh_sender(i)
        self.crossings = []
        self.rng = np.random.Generator(
            np.random.Philox(np.random.SeedSequence(entropy=int(config.seed))))

    def _refresh_sender(self, i):
        row = self.logw[i]
        top = row.max()
        if not np.isfinite(top):
            self.logS[i] = -np.inf
            return
        e = esp.esp_values(np.exp(row - top), int(self.sizes.max()))
        with np.errstate(divide="ignore"):
            self.logS[i] = np.log(e[self.sizes]) + self.sizes * top

    def _refresh_pairs(self, pairs, t_eval):
        beta = self.config.beta_true
        touched = set()
        for (a, b) in pairs:
            if not self.mask[a, b]:
                continue
            x = self.static.x0_pair(a, b).copy()
            self.state.delta_x(t_eval, a, b, out=x)
            self.logw[a, b] = x @ beta
            touched.add(a)
        for i in touched:
            self._refresh_sender(i)

    def _total_and_probs(self):
        lograte = self.logbase + self.logS
        peak = lograte.max()
        if not np.isfinite(peak):
            return 0.0, None
        if peak > _LOG_RATE_CAP:
            raise StreamError(
                "total intensity overflowed; the configuration is explosive")
        rel = np.exp(lograte - peak)
        total = float(np.exp(peak) * rel.sum())
        return total, rel.ravel() / rel.sum()

    def run(self):
        config = self.config
        events = []
        t = 0.0
        horizon = config.horizon if config.horizon is not None else np.inf
        target = config.n_events if config.n_events is not None else np.inf
        while len(events) < target:
            total, probs = self._total_and_probs()
            next_cross = self.crossings[0][0] if self.crossings else np.inf
            if total <= 0.0:
                if next_cross < horizon:
                    self._process_crossings(next_cross)
                    t = next_cross
                    continue
                if config.n_events is not None and len(events) < target:
                    raise StreamError("all intensities are zero; cannot reach "
                                      "the target event count")
                break
            t_cand = t + self.rng.exponential(1.0 / total)
            if t_cand >= next_cross:
                self._process_crossings(next_cross)
                t = next_cross
                continue
            if t_cand > horizon:
                break
            t = t_cand
            pick = self.rng.choice(len(probs), p=probs)
            i, li = divmod(pick, len(self.sizes))
            L = int(self.sizes[li])
            row = self.logw[i]
            w_rel = np.exp(row - row[np.isfinite(row)].max())
            w_rel[~np.isfinite(row)] = 0.0
            recv = esp.sample_fixed_size(w_rel, L, self.rng)
            ev = Event(t, int(i), tuple(int(j) for j in recv))
            events.append(ev)
            self.state.advance(ev)
            t_eval = np.nextafter(t, np.inf)
            dirty = set()
            for b in ev.receivers:
                dirty.update(self.state.affected_pairs(i, b))
                if config.spec.has_binned:
                    for bnd in config.spec.scheme.boundaries:
                        heapq.heappush(self.crossings, (t + bnd, i, b))
            self._refresh_pairs(dirty, t_eval)
        if not events:
            raise StreamError("no events generated")
        return EventStream(events, config.actor_count, traits=config.traits)

    def _process_crossings(self, tc):
        t_eval = np.nextafter(tc, np.inf)
        dirty = set()
        while self.crossings and self.crossings[0][0] <= tc:
            _, a, b = heapq.heappop(self.crossings)
            dirty.update(self.state.affected_pairs(a, b))
        self._refresh_pairs(dirty, t_eval)


def simulate(config):
    """Generate an event stream from the model; deterministic per seed."""
    return _Engine(config).run()


def write_truth(config, path):
    with open(path, "w") as fh:
        json.dump(config.to_json(), fh, indent=2)
