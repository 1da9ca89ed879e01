"""Two-term exponential decay of correlation with distance, and its knee.

    f(x) = a * exp(b * x) + c * exp(d * x)

Fitted by Levenberg-Marquardt on a rescaled abscissa (x / max x) so that
the fast and slow rates are of order one, from several starting rate pairs.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

MIN_POINTS = 8
MIN_SPAN_M = 500.0
KNEE_THRESHOLD = 0.025
KNEE_RESOLUTION_M = 10.0

# starting rates in units of 1 / (max distance)
FAST_STARTS = (-2.0, -5.0, -10.0, -20.0, -50.0)
SLOW_STARTS = (-0.01, -0.1, -0.5, -1.0)


class FitError(RuntimeError):
    def __init__(self, msg: str, diagnostics: dict | None = None):
        super().__init__(msg)
        self.diagnostics = diagnostics or {}


class NoKnee(ValueError):
    pass


@dataclass(frozen=True)
class ExpFitModel:
    a: float
    b: float
    c: float
    d: float
    residual_rmse: float = 0.0
    init_rmse: float = float("nan")
    n_points: int = 0
    iterations: int = 0

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.a * np.exp(self.b * x) + self.c * np.exp(self.d * x)

    def slope(self, x):
        x = np.asarray(x, dtype=float)
        return self.a * self.b * np.exp(self.b * x) + self.c * self.d * np.exp(self.d * x)


def _model(theta, s):
    a, b, c, d = theta
    eb = np.exp(b * s)
    ed = np.exp(d * s)
    return a * eb + c * ed, eb, ed


def _jacobian(theta, s, eb, ed):
    a, _, c, _ = theta
    return np.column_stack((eb, a * s * eb, ed, c * s * ed))


def _linear_amplitudes(b, d, s, y):
    """Best (a, c) for fixed rates by linear least squares."""
    basis = np.column_stack((np.exp(b * s), np.exp(d * s)))
    coef, *_ = np.linalg.lstsq(basis, y, rcond=None)
    return coef


def _levenberg_marquardt(theta, s, y, max_iter=2000, ftol=1e-15, xtol=1e-15):
    """Returns (theta, cost, iterations); cost is the sum of squared residuals."""
    f, eb, ed = _model(theta, s)
    r = f - y
    cost = float(r @ r)
    lam = 1e-3
    it = 0
    for it in range(1, max_iter + 1):
        J = _jacobian(theta, s, eb, ed)
        A = J.T @ J
        g = J.T @ r
        diag = np.maximum(np.diag(A), 1e-12 * max(float(np.diag(A).max()), 1e-300))
        improved = False
        while lam < 1e16:
            try:
                step = np.linalg.solve(A + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            trial = theta + step
            f_t, eb_t, ed_t = _model(trial, s)
            r_t = f_t - y
            cost_t = float(r_t @ r_t)
            if np.isfinite(cost_t) and cost_t < cost:
                improved = True
                break
            lam *= 10
        if not improved:
            break
        small_step = np.linalg.norm(step) <= xtol * (np.linalg.norm(theta) + xtol)
        small_gain = cost - cost_t <= ftol * cost
        theta, cost, r, eb, ed = trial, cost_t, r_t, eb_t, ed_t
        lam = max(lam / 10, 1e-15)
        if small_step or small_gain or cost == 0.0:
            break
    return theta, cost, it


def fit_two_term_exp(points) -> ExpFitModel:
    """Least-squares fit of ``(distance_m, tau)`` pairs.

    The returned model has ``b <= d``: the first term is the fast decay.
    """
    pts = np.asarray([(float(x), float(y)) for x, y in points])
    if len(pts) < MIN_POINTS:
        raise FitError(f"need at least {MIN_POINTS} points, got {len(pts)}")
    x, y = pts[:, 0], pts[:, 1]
    span = float(x.max() - x.min())
    if span < MIN_SPAN_M:
        raise FitError(f"distances span {span:.1f} m, need {MIN_SPAN_M:.0f} m")
    scale = float(np.abs(x).max())
    s = x / scale
    n = len(s)

    best = None
    tried = []
    for fast in FAST_STARTS:
        for slow in SLOW_STARTS:
            a0, c0 = _linear_amplitudes(fast, slow, s, y)
            theta0 = np.array([a0, fast, c0, slow])
            r0 = _model(theta0, s)[0] - y
            init_cost = float(r0 @ r0)
            if not np.isfinite(init_cost):
                continue
            with np.errstate(over="ignore", invalid="ignore"):
                theta, cost, iters = _levenberg_marquardt(theta0, s, y)
            tried.append({"start": (fast, slow), "cost": cost, "iterations": iters})
            if np.isfinite(cost) and np.all(np.isfinite(theta)) and (best is None or cost < best[1]):
                best = (theta, cost, iters, init_cost)
    if best is None:
        raise FitError("no starting point converged", {"starts": tried})

    (a, bs, c, ds), cost, iters, init_cost = best
    b, d = bs / scale, ds / scale
    if b > d:
        a, b, c, d = c, d, a, b
    return ExpFitModel(float(a), float(b), float(c), float(d), math.sqrt(cost / n),
                       math.sqrt(init_cost / n), n, iters)


def knee_distance(model: ExpFitModel, threshold: float = KNEE_THRESHOLD,
                  resolution: float = KNEE_RESOLUTION_M) -> float:
    """Smallest x >= 0 with |f'(x)| <= threshold * |f'(0)|, rounded to ``resolution``."""
    terms = [(amp, rate) for amp, rate in ((model.a, model.b), (model.c, model.d)) if amp != 0]
    s0 = abs(float(model.slope(0.0)))
    if not terms or s0 == 0.0 or all(rate >= 0 for _, rate in terms):
        raise NoKnee("model does not decay")
    target = threshold * s0
    slowest = min(abs(rate) for _, rate in terms if rate < 0)
    x_max = min(10.0 * math.log(1.0 / threshold) / slowest + 1.0, 1e8)
    step = max(1.0, x_max / 2_000_000)
    grid = np.arange(0.0, x_max + step, step)
    with np.errstate(over="ignore"):
        below = np.nonzero(np.abs(model.slope(grid)) <= target)[0]
    if len(below) == 0:
        raise NoKnee(f"slope never drops to {threshold:g} of its initial value")
    k = int(below[0])
    if k == 0:
        return 0.0
    lo, hi = float(grid[k - 1]), float(grid[k])
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if abs(float(model.slope(mid))) <= target:
            hi = mid
        else:
            lo = mid
    return round(hi / resolution) * resolution


def fit_report(model: ExpFitModel, threshold: float = KNEE_THRESHOLD, binned: float | None = None) -> str:
    report = {"model": "a*exp(b*x) + c*exp(d*x)", "x_unit": "m", **asdict(model),
              "knee_threshold": threshold, "binned_width_m": binned}
    try:
        report["knee_distance_m"] = knee_distance(model, threshold)
    except NoKnee as exc:
        report["knee_distance_m"] = None
        report["knee_error"] = str(exc)
    return json.dumps(report, indent=2, sort_keys=True) + "\n"
