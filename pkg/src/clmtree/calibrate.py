"""Crossing-scale calibration: choose delta so a process averages a target
number of level-0 crossings per time window."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .simulate import (
    ProcessSpec,
    expected_crossing_time,
    ou_stationary_lattice_law,
    hitting_prob,
)

logger = logging.getLogger(__name__)

DRIFT_REL_TOL = 1e-12
OU_TARGET_REL_TOL = 2e-4
MC_BISECT_STEPS = 8


@dataclass(frozen=True)
class CalibrationResult:
    kind: str
    n_crossings: int
    t0: float
    delta: float
    params: dict = field(default_factory=dict)
    deltas_by_step: dict | None = None  # step exponent m -> delta_m
    fit_intercept: float | None = None
    fit_slope: float | None = None
    fit_rms: float | None = None
    achieved_mean_window: float | None = None
    achieved_ci_half: float | None = None
    warnings: tuple = ()


def delta_closed_form(spec: ProcessSpec, n_crossings: int, t0: float) -> float:
    """Exact delta for BM; monotone bracketing root solve for drift.

    Both cases equate the constant expected crossing duration to t0/n.
    """
    if n_crossings < 1 or t0 <= 0:
        raise ValueError("need n_crossings >= 1 and t0 > 0")
    target = t0 / n_crossings
    if spec.kind == "bm" or (spec.kind == "bm_drift" and spec.alpha == 0.0):
        return math.sqrt(target)
    if spec.kind != "bm_drift":
        raise ValueError("closed-form calibration covers bm and bm_drift only")

    a = spec.alpha

    def mean_duration(d: float) -> float:
        e = math.exp(2.0 * a * d)
        return d * (e - 1.0) / (a * (e + 1.0))

    lo, hi = 0.5 * math.sqrt(target), 2.0 * math.sqrt(target)
    f_lo, f_hi = mean_duration(lo), mean_duration(hi)
    for _ in range(64):
        if f_lo < target < f_hi:
            break
        if f_lo >= target:
            lo *= 0.5
            f_lo = mean_duration(lo)
        if f_hi <= target:
            hi *= 2.0
            f_hi = mean_duration(hi)
    else:
        raise ValueError(f"root not bracketed in [{lo}, {hi}]")
    while (hi - lo) / hi > DRIFT_REL_TOL:
        mid = 0.5 * (lo + hi)
        f_mid = mean_duration(mid)
        if not f_lo < f_mid < f_hi:
            raise AssertionError("mean crossing duration not increasing")
        if f_mid < target:
            lo, f_lo = mid, f_mid
        else:
            hi, f_hi = mid, f_mid
    return 0.5 * (lo + hi)


def ou_mean_crossing_duration(
    alpha: float, sigma: float, delta: float
) -> float:
    """Stationary-walk-weighted expected crossing duration of the OU chain."""
    spec = ProcessSpec("ou", alpha=alpha, sigma=sigma)
    sites, pi = ou_stationary_lattice_law(alpha, sigma, delta)
    w = np.array([expected_crossing_time(spec, float(x), delta) for x in sites])
    return float(np.dot(pi, w))


def delta_ou(
    alpha: float, sigma: float, n_crossings: int, t0: float,
    rel_tol: float = OU_TARGET_REL_TOL,
) -> float:
    """delta solving the stationary-lattice mean-duration equation by
    monotone bisection, to the given relative error on the target."""
    if alpha <= 0 or sigma <= 0:
        raise ValueError("need alpha > 0 and sigma > 0")
    target = t0 / n_crossings
    guess = sigma * math.sqrt(target)
    lo, hi = 0.7 * guess, 1.5 * guess
    f_lo = ou_mean_crossing_duration(alpha, sigma, lo)
    f_hi = ou_mean_crossing_duration(alpha, sigma, hi)
    for _ in range(32):
        if f_lo < target < f_hi:
            break
        if f_lo >= target:
            lo *= 0.7
            f_lo = ou_mean_crossing_duration(alpha, sigma, lo)
        if f_hi <= target:
            hi *= 1.5
            f_hi = ou_mean_crossing_duration(alpha, sigma, hi)
    else:
        raise ValueError("failed to bracket the OU mean-duration equation")
    mid, f_mid = 0.5 * (lo + hi), None
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        f_mid = ou_mean_crossing_duration(alpha, sigma, mid)
        if abs(f_mid - target) <= rel_tol * target:
            return mid
        if f_mid < target:
            lo = mid
        else:
            hi = mid
    raise RuntimeError("OU bisection did not reach the target tolerance")


# ---------------------------------------------------------------------------
# Monte Carlo calibration on simulated fine paths
# ---------------------------------------------------------------------------

def _gaussian_step_paths(
    spec: ProcessSpec, horizon: float, step: float, rng, n_paths: int
) -> np.ndarray:
    """Exact-in-distribution grid paths for bm / bm_drift / ou."""
    n_steps = int(round(horizon / step))
    if spec.kind in ("bm", "bm_drift"):
        inc = (spec.alpha if spec.kind == "bm_drift" else 0.0) * step \
            + rng.standard_normal((n_paths, n_steps)) * math.sqrt(step)
        out = np.empty((n_paths, n_steps + 1))
        out[:, 0] = 0.0
        np.cumsum(inc, axis=1, out=out[:, 1:])
        return out
    if spec.kind == "ou":
        # exact AR(1) transition
        rho = math.exp(-spec.alpha * step)
        sd = spec.sigma * math.sqrt((1 - rho * rho) / (2 * spec.alpha))
        x = rng.standard_normal(n_paths) * spec.sigma / math.sqrt(2 * spec.alpha)
        out = np.empty((n_paths, n_steps + 1))
        out[:, 0] = x
        for k in range(n_steps):
            x = rho * x + sd * rng.standard_normal(n_paths)
            out[:, k + 1] = x
        return out
    raise ValueError(f"no grid-path sampler for {spec.kind!r}")


def _mean_window_for_n_crossings(
    spec: ProcessSpec, delta: float, step: float, n_paths: int, seed: int,
    n_crossings: int, t_max: float,
) -> tuple[float, float, int]:
    """Mean time from the first lattice hit to the n-th crossing after it.

    Streams the path step by step (Milstein for Feller, exact Gaussian
    steps otherwise), counting interpolated lattice-line crossings, so the
    memory stays O(n_paths).  Returns (mean, se, n_censored); paths not
    finishing by t_max are censored at t_max.
    """
    rng = np.random.default_rng(seed)
    n_steps = int(math.ceil(t_max / step))
    sq = math.sqrt(step)

    if spec.kind == "feller":
        a = 2.0 * spec.kappa * spec.mu / spec.sigma**2
        b = spec.sigma**2 / (2.0 * spec.kappa)
        x = rng.gamma(shape=a, scale=b, size=n_paths)
        resample = np.random.default_rng([seed, 1])
    elif spec.kind == "ou":
        x = rng.standard_normal(n_paths) * spec.sigma / math.sqrt(2 * spec.alpha)
        rho = math.exp(-spec.alpha * step)
        ou_sd = spec.sigma * math.sqrt((1 - rho * rho) / (2 * spec.alpha))
    else:
        x = np.zeros(n_paths)

    cells = np.floor(x / delta).astype(np.int64)
    events = np.zeros(n_paths, dtype=np.int64)  # first-passage hits so far
    sentinel = np.iinfo(np.int64).min
    pos = np.full(n_paths, sentinel, dtype=np.int64)  # last hit line index
    t_first = np.full(n_paths, np.nan)
    t_done = np.full(n_paths, np.nan)
    need = n_crossings + 1  # event 1 initialises; event `need` is crossing n

    for k in range(n_steps):
        t_now = k * step
        if spec.kind == "feller":
            g = rng.standard_normal(n_paths) * sq
            x_new = (x + spec.kappa * (spec.mu - x) * step
                     + spec.sigma * np.sqrt(x) * g
                     + spec.sigma**2 * (g * g - step) / 4.0)
            bad = np.flatnonzero(x_new <= 0.0)
            for i in bad:
                while x_new[i] <= 0.0:
                    gi = resample.standard_normal() * sq
                    x_new[i] = (x[i] + spec.kappa * (spec.mu - x[i]) * step
                                + spec.sigma * math.sqrt(x[i]) * gi
                                + spec.sigma**2 * (gi * gi - step) / 4.0)
        elif spec.kind == "ou":
            x_new = rho * x + ou_sd * rng.standard_normal(n_paths)
        else:
            drift = spec.alpha if spec.kind == "bm_drift" else 0.0
            x_new = x + drift * step + rng.standard_normal(n_paths) * sq

        # lines touched this step, in order of travel; a re-touch of the
        # current position is not a new passage
        new_cells = np.floor(x_new / delta).astype(np.int64)
        going_up = new_cells > cells
        touched = np.abs(new_cells - cells)
        first_line = np.where(going_up, cells + 1, cells)
        last_line = np.where(going_up, new_cells, new_cells + 1)
        active = np.isnan(t_done)
        touched = np.where(active, touched, 0)
        hits = touched - ((touched > 0) & (first_line == pos))
        # interpolated hit times only matter at the first event and at
        # completion; everything else is plain counting
        special = np.flatnonzero(
            (hits > 0) & ((events == 0) | (events + hits >= need))
        )
        for i in special:
            direction = 1 if going_up[i] else -1
            start = first_line[i]
            if start == pos[i]:
                start += direction
            ev = events[i]
            for j in range(hits[i]):
                line = (start + direction * j) * delta
                frac = (line - x[i]) / (x_new[i] - x[i])
                t_hit = t_now + frac * step
                ev += 1
                if ev == 1:
                    t_first[i] = t_hit
                if ev == need:
                    t_done[i] = t_hit
                    break
        events += hits
        pos = np.where(touched > 0, last_line, pos)
        x, cells = x_new, new_cells
        if k % 64 == 0 and not np.isnan(t_done).any():
            break

    censored = int(np.isnan(t_done).sum())
    t_done = np.where(np.isnan(t_done), t_max, t_done)
    t_first = np.where(np.isnan(t_first), 0.0, t_first)
    windows = t_done - t_first
    return float(windows.mean()), float(windows.std(ddof=1)
                                        / math.sqrt(n_paths)), censored


def delta_mc(
    spec: ProcessSpec,
    n_crossings: int,
    t0: float,
    step_exponents=(3, 4, 5),
    n_paths: int = 1000,
    seed: int = 0,
) -> CalibrationResult:
    """Trial-and-error calibration on simulated paths.

    For Feller: calibrate delta at each step size 10**-m, then fit
    log10(delta_{m+1} - delta_m) linearly in m and extrapolate the
    geometric tail to the zero-step limit.  For other kinds a single
    resolution (the largest exponent) is used and the achieved window is
    reported with a confidence interval.
    """
    target_guess = _delta_scale_guess(spec, n_crossings, t0)
    warnings: list[str] = []

    def calibrate_at(m: int, bracket: tuple[float, float]) -> float:
        step = 10.0 ** -m
        # windows censor at 1.35*t0: enough headroom for bracketing, and the
        # censored value still pushes the bisection the right way
        t_max = 1.35 * t0

        def mean_window(d: float) -> float:
            val, _, censored = _mean_window_for_n_crossings(
                spec, d, step, n_paths, _derived_seed(seed, m), n_crossings,
                t_max,
            )
            if censored > n_paths // 20:
                warnings.append(
                    f"step 1e-{m}: {censored} paths censored at t_max"
                )
            return val

        lo, hi = bracket
        f_lo, f_hi = mean_window(lo), mean_window(hi)
        for _ in range(12):
            if f_lo < t0 < f_hi:
                break
            if f_lo >= t0:
                lo *= 0.8
                f_lo = mean_window(lo)
            if f_hi <= t0:
                hi *= 1.25
                f_hi = mean_window(hi)
        else:
            raise ValueError("failed to bracket the crossing-count target")
        for _ in range(MC_BISECT_STEPS):
            mid = 0.5 * (lo + hi)
            if mean_window(mid) < t0:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)

    if spec.kind == "feller":
        exps = sorted(step_exponents)
        deltas: dict[int, float] = {}
        bracket = (0.75 * target_guess, 1.3 * target_guess)
        for m in exps:
            deltas[m] = calibrate_at(m, bracket)
            bracket = (1.0 * deltas[m], 1.28 * deltas[m])
        diffs = np.diff([deltas[m] for m in exps])
        if np.any(diffs <= 0):
            warnings.append("non-monotone per-step deltas; regression refused")
            final = deltas[exps[-1]]
            fit = (None, None, None)
        elif diffs.size < 2:
            warnings.append("need at least 3 step sizes to extrapolate; "
                            "returning the finest-step delta")
            final = deltas[exps[-1]]
            fit = (None, None, None)
        else:
            ms = np.asarray(exps[:-1], dtype=np.float64)
            logd = np.log10(diffs)
            slope, intercept = np.polyfit(ms, logd, 1)
            resid = logd - (slope * ms + intercept)
            rms = float(np.sqrt(np.mean(resid**2)))
            ratio = 10.0 ** slope
            if ratio >= 1.0:
                warnings.append("non-contracting delta differences; "
                                "extrapolation refused")
                final = deltas[exps[-1]]
                fit = (float(intercept), float(slope), rms)
            else:
                tail = 10.0 ** (slope * exps[-1] + intercept) / (1.0 - ratio)
                final = deltas[exps[-1]] + tail
                fit = (float(intercept), float(slope), rms)
        mean_w, se, _ = _mean_window_for_n_crossings(
            spec, deltas[exps[-1]], 10.0 ** -exps[-1], n_paths,
            _derived_seed(seed, exps[-1]), n_crossings, 1.35 * t0,
        )
        return CalibrationResult(
            kind=spec.kind, n_crossings=n_crossings, t0=t0,
            params=_spec_params(spec), delta=final,
            deltas_by_step=deltas, fit_intercept=fit[0], fit_slope=fit[1],
            fit_rms=fit[2], achieved_mean_window=mean_w,
            achieved_ci_half=1.96 * se, warnings=tuple(warnings),
        )

    # generic single-resolution route
    m = max(step_exponents)
    delta = calibrate_at(m, (0.75 * target_guess, 1.3 * target_guess))
    mean_w, se, _ = _mean_window_for_n_crossings(
        spec, delta, 10.0 ** -m, n_paths, _derived_seed(seed, m),
        n_crossings, 1.35 * t0,
    )
    return CalibrationResult(
        kind=spec.kind, n_crossings=n_crossings, t0=t0,
        params=_spec_params(spec), delta=delta,
        deltas_by_step={m: delta}, achieved_mean_window=mean_w,
        achieved_ci_half=1.96 * se, warnings=tuple(warnings),
    )


def _spec_params(spec: ProcessSpec) -> dict:
    keys = {"bm": (), "bm_drift": ("alpha",), "ou": ("alpha", "sigma"),
            "feller": ("kappa", "mu", "sigma"), "fbm": ("hurst", "sigma2")}
    return {k: getattr(spec, k) for k in keys[spec.kind]}


def _delta_scale_guess(spec: ProcessSpec, n: int, t0: float) -> float:
    """Order-of-magnitude start: BM-like scaling with the local diffusion
    coefficient at the process centre."""
    target = t0 / n
    if spec.kind == "feller":
        return math.sqrt(target * spec.sigma**2 * spec.mu)
    if spec.kind == "ou":
        return spec.sigma * math.sqrt(target)
    return math.sqrt(target)


def _derived_seed(seed: int, m: int) -> int:
    return int(seed) * 1000 + int(m)


def feller_stationary_duration_estimate(
    kappa: float, mu: float, sigma: float, delta: float,
    top_sds: float = 24.0,
) -> float:
    """Stationary-walk-weighted mean crossing duration for Feller.

    Diagnostic only: the crossing walk of the stationary Feller process is
    not itself stationary, so this systematically misses the simulated
    window; the MC calibrator is authoritative.  The boundary site delta
    (where the duration formula does not apply) is dropped and the weights
    renormalised.
    """
    spec = ProcessSpec("feller", kappa=kappa, mu=mu, sigma=sigma)
    a = 2.0 * kappa * mu / sigma**2
    b = sigma**2 / (2.0 * kappa)
    sd = math.sqrt(a) * b
    top = max(int(math.ceil((mu + top_sds * sd) / delta)), 6)
    p = np.empty(top + 1)
    p[0] = np.nan
    p[1] = 1.0
    for i in range(2, top + 1):
        p[i] = hitting_prob(spec, i * delta, delta)
    p[top] = 0.0
    logpi = np.zeros(top)  # sites 1..top
    for i in range(1, top):
        logpi[i] = logpi[i - 1] + math.log(p[i]) - math.log1p(-p[i + 1])
    logpi -= logpi.max()
    pi = np.exp(logpi)
    pi /= pi.sum()
    if pi[-1] > 1e-10:
        raise ValueError("Feller lattice truncation too small")
    w = np.array([
        expected_crossing_time(spec, i * delta, delta)
        for i in range(2, top + 1)
    ])
    weights = pi[1:] / pi[1:].sum()
    return float(np.dot(weights, w))
