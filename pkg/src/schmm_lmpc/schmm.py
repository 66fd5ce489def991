"""Semi-continuous HMM over packet delays.

Hidden states share a codebook of ``M - 1`` Gaussian delay distributions plus
one Dirac component that sits on the dropout mask.  Everything here is a pure
function of its inputs; models are immutable and updates return new objects.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.cluster.vq import kmeans2
from scipy.special import log_ndtr

from .errors import ClusterError, DomainError, UnderflowError

DEFAULT_MASK = 1e5
DIRAC_SIGMA = 1e-4
WEIGHT_FLOOR = 1e-6
VAR_FLOOR = 1e-8
STOCHASTIC_TOL = 1e-9
MIN_CLUSTER_SIZE = 10

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class SchmmModel:
    """Parameters ``(pi, trans, mix, mu, sigma)`` of a semi-continuous HMM.

    The last codebook entry is the dropout component: its mean is the mask and
    its spread is a nominal constant that no update ever touches.
    """

    pi: np.ndarray
    trans: np.ndarray
    mix: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    mask: float = DEFAULT_MASK

    def __post_init__(self):
        for name in ("pi", "trans", "mix", "mu", "sigma"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        object.__setattr__(self, "mask", float(self.mask))
        self._validate()

    def _validate(self):
        n, m = self.n_states, self.n_mixtures
        if n < 1 or m < 2:
            raise DomainError("need at least one state, one Gaussian and the dropout component")
        shapes = {"pi": (n,), "trans": (n, n), "mix": (n, m), "mu": (m,), "sigma": (m,)}
        for name, shape in shapes.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise DomainError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.isfinite(arr).all():
                raise DomainError(f"{name} contains non-finite values")
        probs = np.concatenate([self.pi, self.trans.ravel(), self.mix.ravel()])
        if probs.min() < 0 or probs.max() > 1:
            raise DomainError("probabilities must lie in [0, 1]")
        sums = np.concatenate([[self.pi.sum()], self.trans.sum(axis=1), self.mix.sum(axis=1)])
        if np.abs(sums - 1.0).max() > STOCHASTIC_TOL:
            raise DomainError("pi, trans and mix rows must each sum to 1")
        if np.any(self.sigma <= 0):
            raise DomainError("sigma must be strictly positive")
        if self.mu[-1] != self.mask:
            raise DomainError(f"dropout mean {self.mu[-1]} differs from mask {self.mask}")

    @property
    def n_states(self) -> int:
        return self.pi.shape[0]

    @property
    def n_mixtures(self) -> int:
        return self.mu.shape[0]

    def replace(self, **changes) -> "SchmmModel":
        values = dict(pi=self.pi, trans=self.trans, mix=self.mix, mu=self.mu,
                      sigma=self.sigma, mask=self.mask)
        values.update(changes)
        return SchmmModel(**values)

    def to_dict(self) -> dict:
        return {
            "n_states": self.n_states,
            "n_mixtures": self.n_mixtures,
            "pi": self.pi.tolist(),
            "trans": self.trans.tolist(),
            "mix": self.mix.tolist(),
            "mu": self.mu.tolist(),
            "sigma": self.sigma.tolist(),
            "mask": self.mask,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SchmmModel":
        model = cls(pi=d["pi"], trans=d["trans"], mix=d["mix"], mu=d["mu"],
                    sigma=d["sigma"], mask=d.get("mask", DEFAULT_MASK))
        if model.n_states != d.get("n_states", model.n_states) or \
                model.n_mixtures != d.get("n_mixtures", model.n_mixtures):
            raise DomainError("declared sizes disagree with parameter shapes")
        return model

    def equals(self, other: "SchmmModel") -> bool:
        """Bitwise equality of every parameter."""
        return (self.mask == other.mask
                and all(np.array_equal(getattr(self, k), getattr(other, k))
                        for k in ("pi", "trans", "mix", "mu", "sigma")))


@dataclass(frozen=True, eq=False)
class DelayTrace:
    """Ordered per-packet delays in ms; dropouts carry the mask value."""

    samples: np.ndarray
    mask: float = DEFAULT_MASK

    def __post_init__(self):
        s = _frozen(self.samples).reshape(-1)
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "mask", float(self.mask))
        ok = (s == self.mask) | ((s > 0) & (s < self.mask))
        if not np.all(ok):
            bad = int(np.flatnonzero(~ok)[0])
            raise DomainError(f"sample {bad} ({s[bad]!r}) is neither a delay in (0, mask) nor the mask")

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def dropouts(self) -> np.ndarray:
        return self.samples == self.mask

    @property
    def dropout_rate(self) -> float:
        return float(self.dropouts.mean()) if len(self) else 0.0

    @property
    def delays(self) -> np.ndarray:
        """The non-dropout samples."""
        return self.samples[~self.dropouts]


@dataclass(frozen=True, eq=False)
class FilterState:
    """Causal filtered posterior over hidden states."""

    alpha: np.ndarray
    last_state: int
    t: int = 0

    def __post_init__(self):
        object.__setattr__(self, "alpha", _frozen(self.alpha))
        if abs(self.alpha.sum() - 1.0) > STOCHASTIC_TOL:
            raise DomainError("filtered posterior must sum to 1")

    @classmethod
    def initial(cls, model: SchmmModel) -> "FilterState":
        return cls(alpha=model.pi, last_state=int(np.argmax(model.pi)), t=0)


# --------------------------------------------------------------------------
# emissions
# --------------------------------------------------------------------------

def _check_taus(taus) -> np.ndarray:
    taus = np.atleast_1d(np.asarray(taus, dtype=float))
    if np.any(~np.isfinite(taus)) or np.any(taus <= 0):
        raise DomainError("delays must be finite and strictly positive")
    return taus


def _log_interval_mass(lo, hi, mu, sd):
    """log P(lo < X <= hi) for X ~ N(mu, sd^2), stable in both tails."""
    a = (lo - mu) / sd
    b = (hi - mu) / sd
    upper = a > 0
    big = np.where(upper, log_ndtr(-a), log_ndtr(b))
    small = np.where(upper, log_ndtr(-b), log_ndtr(a))
    with np.errstate(invalid="ignore", divide="ignore"):
        out = big + np.log1p(-np.exp(small - big))
    return np.where(np.isneginf(big), -np.inf, out)


def _interval_moments(lo, hi, mu, sd):
    """Mean and variance of N(mu, sd^2) truncated to (lo, hi]."""
    a = (lo - mu) / sd
    b = (hi - mu) / sd
    log_mass = _log_interval_mass(lo, hi, mu, sd)
    with np.errstate(invalid="ignore", over="ignore"):
        ra = np.exp(-0.5 * a * a - _LOG_SQRT_2PI - log_mass)
        rb = np.exp(-0.5 * b * b - _LOG_SQRT_2PI - log_mass)
        mean = mu + sd * (ra - rb)
        var = sd * sd * (1.0 + a * ra - b * rb - (ra - rb) ** 2)
    degenerate = ~np.isfinite(log_mass) | ~np.isfinite(mean) | ~np.isfinite(var)
    mean = np.where(degenerate, np.clip(mu, lo, hi), np.clip(mean, lo, hi))
    var = np.where(degenerate, (hi - lo) ** 2 / 12.0, np.clip(var, 0.0, None))
    return mean, var


def component_loglik(model: SchmmModel, taus, bin_width: float = 1.0,
                     binned: float | None = None) -> np.ndarray:
    """Per-component log-likelihoods, shape ``(T, M)``.

    Point observations use density x ``bin_width``.  With ``binned=w`` each
    delay ``tau`` stands for the interval ``(tau - w, tau]`` and the exact
    Gaussian mass of that interval is used instead.
    """
    taus = _check_taus(taus)
    out = np.full((taus.shape[0], model.n_mixtures), -np.inf)
    drop = taus == model.mask
    x = taus[~drop, None]
    mu, sd = model.mu[:-1], model.sigma[:-1]
    if binned is None:
        z = (x - mu) / sd
        out[~drop, :-1] = -0.5 * z * z - np.log(sd) - _LOG_SQRT_2PI + math.log(bin_width)
    else:
        out[~drop, :-1] = _log_interval_mass(x - binned, x, mu, sd)
    out[drop, -1] = 0.0
    return out


def emission_weight(model: SchmmModel, state: int, tau: float, bin_width: float = 1.0,
                    binned: float | None = None) -> tuple[np.ndarray, float]:
    """Weighted component likelihoods of ``tau`` in ``state`` and their sum b_i(tau)."""
    f = np.exp(component_loglik(model, tau, bin_width, binned)[0])
    weighted = model.mix[state] * f
    return weighted, float(weighted.sum())


def _emission_matrices(model, taus, bin_width, binned=None):
    logf = component_loglik(model, taus, bin_width, binned)
    shift = logf.max(axis=1)
    shift = np.where(np.isfinite(shift), shift, 0.0)
    f = np.exp(logf - shift[:, None])
    return f @ model.mix.T, f, shift


# --------------------------------------------------------------------------
# forward-backward and offline EM
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ForwardBackward:
    """Scaled forward/backward variables (Rabiner scaling)."""

    alpha: np.ndarray
    beta: np.ndarray
    scale: np.ndarray
    log_likelihood: float

    @property
    def gamma(self) -> np.ndarray:
        g = self.alpha * self.beta
        return g / g.sum(axis=1, keepdims=True)


def _forward_backward(model, B, shift):
    T, N = B.shape
    trans = model.trans
    alpha = np.empty((T, N))
    scale = np.empty(T)
    a = model.pi * B[0]
    for t in range(T):
        if t:
            a = (alpha[t - 1] @ trans) * B[t]
        c = a.sum()
        if not c > 0:
            raise UnderflowError(t)
        scale[t] = c
        alpha[t] = a / c
    beta = np.empty((T, N))
    beta[-1] = 1.0
    for t in range(T - 2, -1, -1):
        beta[t] = trans @ (B[t + 1] * beta[t + 1]) / scale[t + 1]
    loglik = float(np.log(scale).sum() + shift.sum())
    return ForwardBackward(alpha, beta, scale, loglik)


def forward_backward(model: SchmmModel, trace: DelayTrace | Sequence[float],
                     bin_width: float = 1.0) -> ForwardBackward:
    taus = trace.samples if isinstance(trace, DelayTrace) else trace
    if len(taus) == 0:
        raise DomainError("trace is empty")
    B, _, shift = _emission_matrices(model, taus, bin_width)
    return _forward_backward(model, B, shift)


def log_likelihood(model: SchmmModel, trace, bin_width: float = 1.0) -> float:
    return forward_backward(model, trace, bin_width).log_likelihood


def floored_simplex(counts: np.ndarray, floor: float = WEIGHT_FLOOR) -> np.ndarray:
    """argmax of sum(c log w) over the simplex with every w >= floor."""
    counts = np.asarray(counts, dtype=float)
    k = counts.shape[0]
    pinned = np.zeros(k, dtype=bool)
    while True:
        free = ~pinned
        budget = 1.0 - floor * pinned.sum()
        w = np.full(k, floor)
        w[free] = counts[free] * budget / counts[free].sum()
        newly = free & (w < floor)
        if not newly.any():
            return w
        pinned |= newly


def _m_step(model, taus, B, f, fb):
    N, M = model.n_states, model.n_mixtures
    gamma = fb.gamma
    # transitions
    weighted_next = B[1:] * fb.beta[1:] / fb.scale[1:, None]
    xi_sum = (fb.alpha[:-1].T @ weighted_next) * model.trans
    rows = xi_sum.sum(axis=1, keepdims=True)
    trans = np.where(rows > 0, xi_sum / np.where(rows > 0, rows, 1.0), model.trans)
    # responsibilities of each (state, component) pair
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(B > 0, gamma / B, 0.0)
    resp = r[:, :, None] * model.mix[None, :, :] * f[:, None, :]
    counts = resp.sum(axis=0)
    comp_w = resp.sum(axis=1)

    mix = np.array(model.mix)
    starved = []
    for i in range(N):
        if counts[i].sum() > 0:
            if np.any(counts[i] * (1.0 - WEIGHT_FLOOR * M) < WEIGHT_FLOOR * counts[i].sum()):
                starved.append(i)
            mix[i] = floored_simplex(counts[i])
    mu = np.array(model.mu)
    sigma = np.array(model.sigma)
    starved_components = []
    for g in range(M - 1):
        w = comp_w[:, g]
        total = w.sum()
        if not total > 1e-300:
            starved_components.append(g)
            continue
        m = float(w @ np.where(w > 0, taus, 0.0) / total)
        v = float(w @ np.where(w > 0, (taus - m) ** 2, 0.0) / total)
        mu[g] = m
        sigma[g] = math.sqrt(max(v, VAR_FLOOR))
    if starved_components:
        warnings.warn(f"codebook components {starved_components} received no responsibility; "
                      "kept their previous parameters", RuntimeWarning, stacklevel=3)
    if starved:
        warnings.warn(f"mixture weights of states {starved} hit the floor {WEIGHT_FLOOR}",
                      RuntimeWarning, stacklevel=3)
    pi = gamma[0] / gamma[0].sum()
    trans = trans / trans.sum(axis=1, keepdims=True)
    return model.replace(pi=pi, trans=trans, mix=mix, mu=mu, sigma=sigma)


def em_fit(model0: SchmmModel, trace: DelayTrace, max_iters: int = 50, tol: float = 1e-8,
           bin_width: float = 1.0) -> tuple[SchmmModel, list[float]]:
    """Baum-Welch for the semi-continuous model.

    Returns the fitted model and the log-likelihood of every model visited,
    starting with ``model0``.  Iteration stops once the increase drops below
    ``tol`` or after ``max_iters`` re-estimations.  The dropout component's
    mean and spread are never re-estimated; its weights are.
    """
    taus = trace.samples
    if len(taus) < 2:
        raise DomainError("EM needs at least two observations")
    B, f, shift = _emission_matrices(model0, taus, bin_width)
    fb = _forward_backward(model0, B, shift)
    model = model0
    history = [fb.log_likelihood]
    for _ in range(max_iters):
        model = _m_step(model, taus, B, f, fb)
        B, f, shift = _emission_matrices(model, taus, bin_width)
        fb = _forward_backward(model, B, shift)
        history.append(fb.log_likelihood)
        if history[-1] - history[-2] < tol:
            break
    return model, history


def em_converged(history: Sequence[float], tol: float) -> bool:
    return len(history) >= 2 and history[-1] - history[-2] < tol


# --------------------------------------------------------------------------
# initialization
# --------------------------------------------------------------------------

def _cluster_loglik(n: float, var: float, total: float) -> float:
    # hard-assignment log-likelihood of n points under a fitted Gaussian plus its mixing weight
    return -0.5 * n * math.log(2.0 * math.pi * math.e * max(var, VAR_FLOOR)) + n * math.log(n / total)


def _merge_clusters(stats: list, k: int, total: float) -> list:
    """Greedily merge adjacent 1-D clusters ``(n, mean, var)`` until ``k`` remain.

    Each merge picks the pair whose moment-matched union loses the least
    log-likelihood, so tight low-weight clusters survive next to broad ones.
    """
    stats = sorted(stats, key=lambda s: s[1])

    def union(a, b):
        n = a[0] + b[0]
        m = (a[0] * a[1] + b[0] * b[1]) / n
        v = (a[0] * (a[2] + (a[1] - m) ** 2) + b[0] * (b[2] + (b[1] - m) ** 2)) / n
        return n, m, v

    while len(stats) > k:
        costs = []
        for a, b in zip(stats[:-1], stats[1:]):
            u = union(a, b)
            costs.append(_cluster_loglik(a[0], a[2], total) + _cluster_loglik(b[0], b[2], total)
                         - _cluster_loglik(u[0], u[2], total))
        i = int(np.argmin(costs))
        stats[i:i + 2] = [union(stats[i], stats[i + 1])]
    return stats


def init_model(n_states: int, n_mixtures: int, trace: DelayTrace, mask: float | None = None,
               rng_seed: int = 0, n_init: int = 10, oversplit: int = 4) -> SchmmModel:
    """Uniform (pi, trans, mix); Gaussian codebook seeded by 1-D k-means.

    k-means is run with up to ``oversplit`` times more centers than Gaussians
    (fewer for short traces; best inertia of ``n_init`` restarts) and the clusters are then merged back by
    least likelihood loss.  Plain k-means tends to split a broad, heavy mode
    rather than isolate a narrow, light one; over-segmenting first avoids that.
    """
    if n_states < 1:
        raise DomainError("n_states must be positive")
    if n_mixtures < 2:
        raise DomainError("n_mixtures must be at least 2 (one Gaussian plus the dropout component)")
    if oversplit < 1:
        raise DomainError("oversplit must be at least 1")
    mask = trace.mask if mask is None else float(mask)
    data = trace.samples[trace.samples != mask]
    k = n_mixtures - 1
    n_distinct = np.unique(data).shape[0]
    if n_distinct < k:
        raise ClusterError(f"only {n_distinct} distinct delays for {k} clusters; "
                           "reduce the number of mixtures")
    # over-split only while clusters can still hold several points each
    k_over = max(k, min(k * oversplit, n_distinct, len(data) // MIN_CLUSTER_SIZE))
    rng = np.random.default_rng(rng_seed)
    obs = data.reshape(-1, 1)
    best = None
    for kk in dict.fromkeys((k_over, k)):
        for _ in range(n_init):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                centers, labels = kmeans2(obs, kk, minit="++", seed=rng)
            if np.unique(labels).shape[0] < k:
                continue
            inertia = float(((data - centers[labels, 0]) ** 2).sum())
            if best is None or inertia < best[0]:
                best = (inertia, labels)
        if best is not None:
            break
    if best is None:
        raise ClusterError(f"k-means could not populate {k} clusters; reduce the number of mixtures")
    inertia, labels = best
    pooled_var = max(inertia / len(data), VAR_FLOOR)
    stats = []
    for c in np.unique(labels):
        members = data[labels == c]
        var = float(members.var()) if members.shape[0] > 1 else pooled_var
        stats.append((float(members.shape[0]), float(members.mean()), var))
    stats = _merge_clusters(stats, k, float(len(data)))
    mu = [s[1] for s in stats] + [mask]
    sigma = [max(math.sqrt(s[2]), math.sqrt(VAR_FLOOR)) for s in stats] + [DIRAC_SIGMA]
    return SchmmModel(
        pi=np.full(n_states, 1.0 / n_states),
        trans=np.full((n_states, n_states), 1.0 / n_states),
        mix=np.full((n_states, n_mixtures), 1.0 / n_mixtures),
        mu=mu, sigma=sigma, mask=mask)


# --------------------------------------------------------------------------
# online operation
# --------------------------------------------------------------------------

def incremental_em_update(model: SchmmModel, tau_prev: float, eta: float = 0.1, *,
                          bin_width: float = 1.0, binned: float | None = None) -> SchmmModel:
    """One step of incremental EM driven by a single delay observation.

    Posteriors use the model prior ``pi`` (not the filtered belief).  Each
    Gaussian codebook entry moves toward the observation in proportion to its
    responsibility, so the update stays a convex combination for any
    responsibility in [0, 1].
    """
    if not 0.0 <= eta <= 1.0:
        raise DomainError("learning rate must lie in [0, 1]")
    if eta == 0.0:
        return model
    f = np.exp(component_loglik(model, tau_prev, bin_width, binned)[0])
    b = model.mix @ f
    z = float(model.pi @ b)
    if not z > 0 or not math.isfinite(z):
        warnings.warn(f"observation {tau_prev} has zero probability under the model; ignored",
                      RuntimeWarning, stacklevel=2)
        return model
    gamma = model.pi * b / z
    joint = model.pi[:, None] * model.trans * b[None, :]
    joint /= joint.sum()

    pi = (1.0 - eta) * model.pi + eta * gamma
    pi /= pi.sum()
    trans = (1.0 - eta) * model.trans + eta * joint
    trans /= trans.sum(axis=1, keepdims=True)

    with np.errstate(invalid="ignore", divide="ignore"):
        per_state = np.where(b > 0, gamma / b, 0.0)
    resp = per_state @ (model.mix * f)
    mu = np.array(model.mu)
    var = np.array(model.sigma) ** 2
    gauss = slice(0, model.n_mixtures - 1)
    if tau_prev != model.mask:
        if binned is None:
            m_obs, v_obs = np.full(model.n_mixtures - 1, float(tau_prev)), 0.0
        else:
            m_obs, v_obs = _interval_moments(tau_prev - binned, tau_prev, mu[gauss], model.sigma[gauss])
        rate = eta * np.clip(resp[gauss], 0.0, 1.0)
        mu[gauss] = (1.0 - rate) * mu[gauss] + rate * m_obs
        var[gauss] = (1.0 - rate) * var[gauss] + rate * ((m_obs - mu[gauss]) ** 2 + v_obs)
    sigma = np.sqrt(np.maximum(var, VAR_FLOOR))
    sigma[-1] = model.sigma[-1]
    return model.replace(pi=pi, trans=trans, mu=mu, sigma=sigma)


def estimate_prev_delay(received_state, predicted_history: Iterable[tuple[int, Sequence[float]]],
                        return_distances: bool = False):
    """Lag whose predicted state is closest to the received (delayed) state.

    Ties go to the smallest lag.  With ``return_distances`` the distances
    (ordered by ascending lag) are returned as well.
    """
    items = sorted(predicted_history, key=lambda item: item[0])
    if not items:
        raise DomainError("predicted history is empty")
    lags = np.array([lag for lag, _ in items])
    states = np.array([np.asarray(s, dtype=float) for _, s in items])
    dist = np.linalg.norm(states - np.asarray(received_state, dtype=float), axis=1)
    lag = int(lags[int(np.argmin(dist))])
    return (lag, dist) if return_distances else lag


def filter_update(model: SchmmModel, filt: FilterState, tau: float, *, bin_width: float = 1.0,
                  binned: float | None = None) -> FilterState:
    prior = model.pi if filt.t == 0 else filt.alpha @ model.trans
    f = np.exp(component_loglik(model, tau, bin_width, binned)[0])
    post = prior * (model.mix @ f)
    total = post.sum()
    if not total > 0:
        post, total = prior, prior.sum()
    post = post / total
    return FilterState(alpha=post, last_state=int(np.argmax(post)), t=filt.t + 1)


def viterbi_predict(model: SchmmModel, filt: FilterState, tau_prev: float, *,
                    bin_width: float = 1.0, binned: float | None = None) -> tuple[float, FilterState]:
    """Fold ``tau_prev`` into the filter and forecast the next delay.

    The forecast is the mean of the heaviest codebook entry of the most likely
    successor state; a forecast equal to ``model.mask`` means dropout.
    """
    filt = filter_update(model, filt, tau_prev, bin_width=bin_width, binned=binned)
    return predict_next(model, filt.last_state), filt


def predict_next(model: SchmmModel, state: int) -> float:
    s_next = int(np.argmax(model.trans[state]))
    g = int(np.argmax(model.mix[s_next]))
    return float(model.mu[g])


# --------------------------------------------------------------------------
# sampling
# --------------------------------------------------------------------------

class SchmmSampler:
    """Stateful generator of delays from a model; deterministic given the seed."""

    def __init__(self, model: SchmmModel, seed=None):
        self.model = model
        self.rng = np.random.default_rng(seed)
        self.state: int | None = None
        self._cum_pi = np.cumsum(model.pi)
        self._cum_trans = np.cumsum(model.trans, axis=1)
        self._cum_mix = np.cumsum(model.mix, axis=1)

    @staticmethod
    def _pick(cum, u) -> int:
        return min(int(np.searchsorted(cum, u * cum[-1], side="right")), cum.shape[0] - 1)

    def draw(self) -> float:
        m = self.model
        if self.state is None:
            self.state = self._pick(self._cum_pi, self.rng.random())
        else:
            self.state = self._pick(self._cum_trans[self.state], self.rng.random())
        g = self._pick(self._cum_mix[self.state], self.rng.random())
        if g == m.n_mixtures - 1:
            return m.mask
        while True:
            tau = m.mu[g] + m.sigma[g] * self.rng.standard_normal()
            if 0 < tau < m.mask:
                return float(tau)

    def draw_many(self, n: int) -> np.ndarray:
        return np.array([self.draw() for _ in range(n)])


def sample_trace(model: SchmmModel, length: int, rng_seed=None) -> DelayTrace:
    return DelayTrace(SchmmSampler(model, rng_seed).draw_many(length), mask=model.mask)


def stationary_distribution(trans: np.ndarray) -> np.ndarray:
    n = trans.shape[0]
    lhs = np.vstack([trans.T - np.eye(n), np.ones(n)])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    p, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)
    p = np.clip(p, 0.0, None)
    return p / p.sum()


def dropout_probability(model: SchmmModel) -> float:
    """Long-run fraction of dropouts."""
    return float(stationary_distribution(model.trans) @ model.mix[:, -1])


# --------------------------------------------------------------------------
# model files
# --------------------------------------------------------------------------

def save_model(model: SchmmModel, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), indent=2) + "\n", encoding="utf-8")


def load_model(path) -> SchmmModel:
    return SchmmModel.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def model_drift(a: SchmmModel, b: SchmmModel) -> float:
    """Largest absolute change across pi, trans and mix."""
    return float(max(np.abs(a.pi - b.pi).max(), np.abs(a.trans - b.trans).max(),
                     np.abs(a.mix - b.mix).max()))
