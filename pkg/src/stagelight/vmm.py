"""Von Mises mixture fits of circular hue data.

A frame's thresholded hue histogram, mapped to angles, is decomposed into
weighted von Mises components by EM; the component count is chosen by BIC.
The concentration update inverts A(kappa) = I1(kappa)/I0(kappa) with the
closed-form estimate kappa = r(2 - r^2)/(1 - r^2) refined by two Newton
steps. Kappa is capped at 1e4: point-mass clusters otherwise overflow I0,
and a fit that hits the cap is flagged degenerate.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
from scipy.special import i0e, i1e, logsumexp

KAPPA_CAP = 1e4
TWO_PI = 2.0 * math.pi


def bessel_i0(kappa: float) -> float:
    """Modified Bessel function I0: power series below 15, asymptotic above.

    The series adds terms until the relative term drops below 1e-16; the
    asymptotic branch is e^k / sqrt(2 pi k) times the standard expansion,
    summed while terms keep shrinking. Inputs above ~709 overflow double
    precision; use log_bessel_i0 there.
    """
    k = float(kappa)
    if k < 0:
        raise ValueError(f"kappa must be non-negative, got {k}")
    if k < 15.0:
        q = 0.25 * k * k
        total, term, i = 1.0, 1.0, 1
        while True:
            term *= q / (i * i)
            total += term
            if term < 1e-16 * total:
                return total
            i += 1
    return math.exp(k) / math.sqrt(TWO_PI * k) * _i0_asymptotic_series(k)


def _i0_asymptotic_series(k: float) -> float:
    # sum_j ((2j-1)!!)^2 / (j! 8^j k^j), truncated when terms stop shrinking
    total, term = 1.0, 1.0
    for j in range(1, 40):
        factor = (2 * j - 1) ** 2 / (8.0 * j * k)
        nxt = term * factor
        if abs(nxt) >= abs(term):
            break
        term = nxt
        total += term
        if abs(term) < 1e-17 * total:
            break
    return total


def log_bessel_i0(kappa: float) -> float:
    """log I0(kappa), stable for large kappa (log space above 50)."""
    k = float(kappa)
    if k < 0:
        raise ValueError(f"kappa must be non-negative, got {k}")
    if k <= 50.0:
        return math.log(bessel_i0(k))
    return k - 0.5 * math.log(TWO_PI * k) + math.log(_i0_asymptotic_series(k))


@dataclass(frozen=True)
class VonMisesComponent:
    """One circular component: mean direction mu (wrapped to [0, 2pi)), kappa >= 0."""

    mu: float
    kappa: float

    def __post_init__(self):
        if not math.isfinite(self.kappa) or self.kappa < 0:
            raise ValueError(f"kappa must be finite and non-negative, got {self.kappa}")
        object.__setattr__(self, "mu", float(self.mu) % TWO_PI)


def vm_logpdf(x, comp: VonMisesComponent):
    """Log density: kappa cos(x - mu) - ln(2 pi) - log I0(kappa)."""
    x = np.asarray(x, dtype=np.float64)
    out = comp.kappa * np.cos(x - comp.mu) - math.log(TWO_PI) - log_bessel_i0(comp.kappa)
    return float(out) if out.ndim == 0 else out


@dataclass
class VonMisesMixture:
    weights: np.ndarray
    components: List[VonMisesComponent]
    degenerate: bool = False

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1 or len(w) != len(self.components) or len(w) < 1:
            raise ValueError("weights and components must align and be non-empty")
        if (w < 0).any() or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be a simplex")
        self.weights = w

    @property
    def k(self) -> int:
        return len(self.components)

    def log_pdf(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        cols = [
            (math.log(w) if w > 0 else -np.inf) + vm_logpdf(x, c)
            for w, c in zip(self.weights, self.components)
        ]
        return logsumexp(np.stack(cols, axis=1), axis=1)

    def pdf(self, x):
        return np.exp(self.log_pdf(x))

    def log_likelihood(self, samples) -> float:
        return float(self.log_pdf(samples).sum())


@dataclass
class FitConfig:
    k_candidates: Sequence[int] = (1, 2, 3, 4)
    max_iters: int = 200
    tol: float = 1e-6
    seed: int = 0
    restarts: int = 5

    def __post_init__(self):
        if not self.k_candidates:
            raise ValueError("k_candidates must be non-empty")
        if self.tol <= 0:
            raise ValueError("tol must be positive")


def _circular_distance(a, b):
    d = np.abs(np.asarray(a) - np.asarray(b)) % TWO_PI
    return np.minimum(d, TWO_PI - d)


def _kappa_from_mean_length(r: float) -> float:
    """Invert A(kappa) = I1/I0 = r: closed form plus two Newton refinements."""
    r = min(max(float(r), 0.0), 1.0)
    if r < 1e-12:
        return 0.0
    if r >= 1.0 - 1e-12:
        return KAPPA_CAP
    k = r * (2.0 - r * r) / (1.0 - r * r)
    for _ in range(2):
        if k < 1e-8 or k >= KAPPA_CAP:
            break
        a = i1e(k) / i0e(k)
        da = 1.0 - a * a - a / k
        if da <= 0:
            break
        k -= (a - r) / da
        if not math.isfinite(k) or k <= 0:
            return 0.0
    return min(max(k, 0.0), KAPPA_CAP)


def _seed_centers(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    # k-means++ style: next center drawn with probability ~ squared circular
    # distance to the nearest already-chosen center
    centers = [x[rng.integers(len(x))]]
    for _ in range(1, k):
        d = np.min(
            np.stack([_circular_distance(x, c) for c in centers], axis=1), axis=1
        )
        w = d * d
        total = w.sum()
        if total <= 0:
            centers.append(x[rng.integers(len(x))])
            continue
        centers.append(rng.choice(x, p=w / total))
    return np.asarray(centers)


def _init_mixture(x: np.ndarray, k: int, rng: np.random.Generator) -> VonMisesMixture:
    centers = _seed_centers(x, k, rng)
    assign = np.argmin(
        np.stack([_circular_distance(x, c) for c in centers], axis=1), axis=1
    )
    weights = np.empty(k)
    comps = []
    for j in range(k):
        members = x[assign == j]
        weights[j] = max(len(members), 1)
        if len(members) == 0:
            comps.append(VonMisesComponent(centers[j], 1.0))
            continue
        s, c = np.sin(members).sum(), np.cos(members).sum()
        mu = math.atan2(s, c)
        rbar = math.hypot(s, c) / len(members)
        comps.append(VonMisesComponent(mu, min(_kappa_from_mean_length(rbar), 100.0)))
    weights /= weights.sum()
    return VonMisesMixture(weights, comps)


def _log_resp(x: np.ndarray, mix: VonMisesMixture) -> np.ndarray:
    cols = []
    for w, comp in zip(mix.weights, mix.components):
        lw = math.log(w) if w > 0 else -np.inf
        cols.append(lw + vm_logpdf(x, comp))
    return np.stack(cols, axis=1)


def em_fit(
    samples, k: int, config: FitConfig | None = None, trace: list | None = None
) -> Tuple[VonMisesMixture, float]:
    """Fit a K-component mixture by EM; returns the best of `restarts` runs.

    The per-iteration log-likelihood is checked to be non-decreasing (1e-9
    slack); a violation is a bug, not data noise, so it raises. Passing a
    list as ``trace`` collects one log-likelihood sequence per restart.
    """
    cfg = config or FitConfig()
    x = np.asarray(samples, dtype=np.float64).ravel()
    if not np.all(np.isfinite(x)):
        raise ValueError("samples must be finite angles in radians")
    n = len(x)
    if n < 3 * k:
        raise ValueError(f"need at least {3 * k} samples to fit K={k}, got {n}")
    rng = np.random.default_rng(cfg.seed)
    best: Tuple[VonMisesMixture, float] | None = None
    for _ in range(max(1, cfg.restarts)):
        mix = _init_mixture(x, k, rng)
        prev_ll = -np.inf
        lls: list = []
        if trace is not None:
            trace.append(lls)
        for _it in range(cfg.max_iters):
            logp = _log_resp(x, mix)
            norm = logsumexp(logp, axis=1)
            ll = float(norm.sum())
            lls.append(ll)
            # slack is relative: the two-step Newton kappa inversion leaves
            # O(1e-7) jitter in the converged log-likelihood at n ~ 5000
            if ll < prev_ll - 1e-9 * max(1.0, abs(prev_ll)):
                raise RuntimeError(
                    f"EM log-likelihood decreased: {prev_ll} -> {ll}"
                )
            resp = np.exp(logp - norm[:, None])
            nk = np.maximum(resp.sum(axis=0), 1e-12)
            weights = nk / n
            s = resp.T @ np.sin(x)
            c = resp.T @ np.cos(x)
            comps = []
            for j in range(k):
                mu = math.atan2(s[j], c[j])
                rbar = math.hypot(s[j], c[j]) / nk[j]
                comps.append(VonMisesComponent(mu, _kappa_from_mean_length(rbar)))
            mix = VonMisesMixture(weights / weights.sum(), comps)
            if ll - prev_ll < cfg.tol and _it > 0:
                prev_ll = ll
                break
            prev_ll = ll
        final_ll = mix.log_likelihood(x)
        if best is None or final_ll > best[1]:
            best = (mix, final_ll)
    mix, ll = best
    if any(comp.kappa >= KAPPA_CAP for comp in mix.components):
        mix = VonMisesMixture(mix.weights, mix.components, degenerate=True)
    return mix, ll


def bic(loglik: float, k: int, n: int) -> float:
    """(3K - 1) ln n - 2 loglik: K means, K kappas, K-1 free weights."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return (3 * k - 1) * math.log(n) - 2.0 * loglik


def select_k(samples, config: FitConfig | None = None) -> VonMisesMixture:
    """Fit every candidate K and return the minimum-BIC mixture (ties: smaller K)."""
    cfg = config or FitConfig()
    x = np.asarray(samples, dtype=np.float64).ravel()
    n = len(x)
    feasible = [k for k in sorted(set(cfg.k_candidates)) if n >= 3 * k]
    if not feasible:
        raise ValueError(f"no candidate K is feasible for {n} samples")
    if len(feasible) < len(set(cfg.k_candidates)):
        warnings.warn(f"skipping K > {n // 3}: too few samples", stacklevel=2)
    best_mix, best_bic = None, np.inf
    for k in feasible:
        mix, ll = em_fit(x, k, cfg)
        score = bic(ll, k, n)
        if score < best_bic:
            best_mix, best_bic = mix, score
    return best_mix


def hue_to_angle(h):
    """Map hue bins [0, 179] onto the circle: h * 2 pi / 180."""
    h = np.asarray(h)
    if h.min() < 0 or h.max() > 179:
        raise ValueError("hue bins must be in [0, 179]")
    out = h * (math.pi / 90.0)
    return float(out) if out.ndim == 0 else out


def angle_to_hue(a):
    """Inverse of hue_to_angle, in continuous hue units [0, 180)."""
    return (np.asarray(a, dtype=np.float64) % TWO_PI) * (90.0 / math.pi)


def histogram_samples(hue_counts: np.ndarray) -> np.ndarray:
    """Expand a 180-bin hue histogram into one angle per counted pixel."""
    counts = np.asarray(hue_counts, dtype=np.int64)
    if counts.shape != (180,):
        raise ValueError("expected a 180-bin hue histogram")
    bins = np.repeat(np.arange(180), counts)
    return hue_to_angle(bins)


def mixture_report(mix: VonMisesMixture, samples) -> dict:
    """JSON-friendly summary used by the CLI."""
    ll = mix.log_likelihood(samples)
    return {
        "K": mix.k,
        "weights": [float(w) for w in mix.weights],
        "mu_deg_hue": [float(angle_to_hue(c.mu)) for c in mix.components],
        "kappa": [float(c.kappa) for c in mix.components],
        "bic": bic(ll, mix.k, len(np.atleast_1d(samples))),
        "degenerate": mix.degenerate,
    }
