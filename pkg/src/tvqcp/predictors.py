"""Stationary and time-varying (weighted) linear prediction under L2 or L1 norms.

Sign convention: the inverse filter is ``A(z) = 1 + sum_k a_k z^-k`` and the
prediction is ``xhat[n] = -sum_k a_k[n] x[n-k]``. Time-varying coefficients
are polynomials in the normalized in-window time ``t = n / (N - 1)``::

    a_k[n] = sum_i b[k, i] * t(n)**i

The L2 fit solves the weighted normal equations. The L1 fit is a linear
program solved with a primal-dual interior-point method (reweighted least
squares is available as an alternative) and finished with an exact solve
through the interpolated rows, the vertex where an LP optimum of weighted
least absolute deviations lives.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from ._validation import check_norm, check_positive_int, check_signal, check_weights

logger = logging.getLogger(__name__)

RIDGE = 1e-10
IRLS_EPS = 1e-8
IRLS_TOL = 1e-9
GAP_TOL = 1e-7
MAX_ITER = 300


class SingularDesignError(np.linalg.LinAlgError):
    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class ConvergenceError(RuntimeError):
    """Raised when the L1 solver stops before reaching its tolerances.

    ``result`` carries the best iterate found and ``gap`` the remaining
    primal-dual gap.
    """

    def __init__(self, message, result=None, gap=None):
        super().__init__(message)
        self.result = result
        self.gap = gap


@dataclass(frozen=True)
class PredictorConfig:
    order: int = 8
    poly_order: int = 3
    norm: int = 1
    weighting: str = "qcp"

    def __post_init__(self):
        check_positive_int(self.order, "order")
        check_positive_int(self.poly_order, "poly_order", minimum=0)
        object.__setattr__(self, "norm", check_norm(self.norm))
        if self.weighting not in ("none", "ste", "residual", "qcp"):
            raise ValueError(f"unknown weighting {self.weighting!r}")

    @property
    def n_params(self):
        return self.order * (self.poly_order + 1)


def normalized_time(n_samples):
    if n_samples <= 1:
        return np.zeros(n_samples)
    return np.arange(n_samples) / (n_samples - 1)


@dataclass(frozen=True, eq=False)
class DesignMatrices:
    """Target ``x`` (N,), regressors ``Y`` (N, p(q+1)) and error weights (N,).

    Column ``(k-1)*(q+1) + i`` of ``Y`` holds ``x[n-k] * t(n)**i``.
    """

    target: np.ndarray
    regressors: np.ndarray
    weights: np.ndarray
    order: int
    poly_order: int
    start_sample: int = 0

    @property
    def n_samples(self):
        return self.target.shape[0]


@dataclass(frozen=True, eq=False)
class TvModel:
    """Polynomial-basis predictor over one analysis window.

    ``coef[k-1, i]`` is ``b[k, i]`` in the inverse-filter convention.
    """

    coef: np.ndarray
    n_samples: int
    start_sample: int = 0

    @property
    def order(self):
        return self.coef.shape[0]

    @property
    def poly_order(self):
        return self.coef.shape[1] - 1

    def time(self, n):
        n = np.asarray(n)
        if np.any((n < 0) | (n >= self.n_samples)):
            raise IndexError(f"sample index outside model window [0, {self.n_samples})")
        if self.n_samples <= 1:
            return np.zeros_like(n, dtype=float)
        return n / (self.n_samples - 1)

    def trajectory(self):
        """Coefficients ``a_k[n]`` for every window sample, shape (N, p)."""
        t = normalized_time(self.n_samples)
        powers = t[:, None] ** np.arange(self.poly_order + 1)[None, :]
        return powers @ self.coef.T

    def inverse_filter(self, n):
        """``[1, a_1[n], ..., a_p[n]]``."""
        return np.concatenate([[1.0], eval_coeffs(self, n)])


@dataclass(eq=False)
class FitResult:
    model: TvModel
    residual: np.ndarray
    objective: float
    norm: int
    weights: np.ndarray
    n_iter: int = 0
    gap: float = 0.0
    info: dict = field(default_factory=dict)


# ----------------------------------------------------------------- design

def design_from_arrays(x, history, order, poly_order, weights=None, start_sample=0):
    """Build the regression problem for samples ``x`` preceded by ``history``."""
    x = check_signal(x)
    order = check_positive_int(order, "order")
    poly_order = check_positive_int(poly_order, "poly_order", minimum=0)
    n = x.shape[0]
    n_params = order * (poly_order + 1)
    if n <= n_params:
        raise ValueError(
            f"window of {n} samples too short for order {order} and polynomial order {poly_order}"
        )
    hist = np.zeros(order) if history is None else np.asarray(history, dtype=float)[-order:]
    if hist.shape[0] < order:
        hist = np.concatenate([np.zeros(order - hist.shape[0]), hist])
    ext = np.concatenate([hist, x])
    # lagged[:, k-1] = x[n-k]
    lagged = np.column_stack([ext[order - k: order - k + n] for k in range(1, order + 1)])
    t = normalized_time(n)
    powers = t[:, None] ** np.arange(poly_order + 1)[None, :]
    Y = (lagged[:, :, None] * powers[:, None, :]).reshape(n, n_params)
    return DesignMatrices(x, Y, check_weights(weights, n), order, poly_order, start_sample)


def build_design(window, cfg, weights=None):
    """Design matrices for an :class:`~tvqcp.signal_io.AnalysisWindow`.

    Past samples before the window come from the parent waveform (zeros at the
    start of the utterance).
    """
    return design_from_arrays(
        window.samples,
        window.history(cfg.order),
        cfg.order,
        cfg.poly_order,
        weights,
        start_sample=window.start_sample,
    )


def _as_model(d, c):
    # regression solves x ~ Y c; inverse-filter coefficients are -c
    coef = -np.asarray(c, dtype=float).reshape(d.order, d.poly_order + 1)
    return TvModel(coef, d.n_samples, d.start_sample)


def _objective(d, c, norm):
    e = d.target - d.regressors @ c
    if norm == 2:
        return e, float(np.sum(d.weights * e * e))
    return e, float(np.sum(d.weights * np.abs(e)))


def _weighted_normal_solve(Y, x, u):
    R = Y.T @ (u[:, None] * Y)
    r = Y.T @ (u * x)
    tr = np.trace(R)
    if not np.isfinite(tr):
        raise SingularDesignError("non-finite normal equations")
    if tr == 0.0:
        return np.zeros(Y.shape[1])
    R[np.diag_indices_from(R)] += RIDGE * tr / R.shape[0]
    try:
        c = sla.solve(R, r, assume_a="pos", check_finite=False)
    except (np.linalg.LinAlgError, ValueError) as exc:
        cond = np.linalg.cond(R)
        raise SingularDesignError(f"normal equations singular (cond={cond:.3g})", cond) from exc
    if not np.all(np.isfinite(c)):
        cond = np.linalg.cond(R)
        raise SingularDesignError(f"normal equations singular (cond={cond:.3g})", cond)
    return c


def solve_l2(d):
    """Weighted least squares: minimize ``sum w[n] e[n]**2``."""
    c = _weighted_normal_solve(d.regressors, d.target, d.weights)
    e, obj = _objective(d, c, 2)
    return FitResult(_as_model(d, c), e, obj, 2, d.weights)


def smoothed_l1(d, c, eps):
    """``sum w * sqrt(e**2 + eps**2)`` and its gradient with respect to ``c``."""
    e = d.target - d.regressors @ c
    s = np.sqrt(e * e + eps * eps)
    value = float(np.sum(d.weights * s))
    grad = -d.regressors.T @ (d.weights * e / s)
    return value, grad


def _vertex_polish(d, c):
    """Exact solve through the rows with the smallest weighted residuals.

    An L1 regression optimum interpolates at least ``rank(Y)`` rows; near the
    optimum those rows are the ones IRLS has already driven towards zero.
    """
    Y, x, w = d.regressors, d.target, d.weights
    n_params = Y.shape[1]
    e = x - Y @ c
    candidates = np.flatnonzero(w > 0)
    if candidates.size < n_params:
        return None
    order = candidates[np.argsort(np.abs(e[candidates]), kind="stable")]
    rows = []
    basis = np.zeros((0, n_params))
    scale = np.max(np.abs(Y)) if Y.size else 0.0
    if scale == 0.0:
        return None
    for idx in order:
        trial = np.vstack([basis, Y[idx]])
        if np.linalg.matrix_rank(trial, tol=1e-9 * scale) == trial.shape[0]:
            rows.append(idx)
            basis = trial
            if len(rows) == n_params:
                break
    if len(rows) < n_params:
        return None
    try:
        return np.linalg.solve(Y[rows], x[rows])
    except np.linalg.LinAlgError:
        return None


def _vertex_dual_bound(d, c):
    """Dual objective certifying ``c`` as an L1 optimum, or None.

    Rows with nonzero residual fix ``y = w * sign(e)``; the interpolated rows
    must then balance ``Y'y = 0`` with ``|y| <= w``.
    """
    Y, x, w = d.regressors, d.target, d.weights
    e = x - Y @ c
    scale = float(np.max(np.abs(x)))
    zero = np.abs(e) <= 1e-9 * scale
    if not zero.any():
        return None
    y = np.where(zero, 0.0, w * np.sign(e))
    rhs = -(Y[~zero].T @ y[~zero])
    yz, *_ = np.linalg.lstsq(Y[zero].T, rhs, rcond=None)
    balance = np.linalg.norm(Y[zero].T @ yz - rhs)
    if balance > 1e-9 * (1.0 + np.linalg.norm(rhs)) or np.any(np.abs(yz) > w[zero] * (1 + 1e-9) + 1e-300):
        return None
    y[zero] = yz
    return float(x @ y)


def _step_length(z, dz):
    neg = dz < 0
    if not np.any(neg):
        return 1.0
    return min(1.0, float(np.min(-z[neg] / dz[neg])))


def _solve_l1_ipm(Y, x, w, c0, max_iter=100, tol=1e-11):
    """Mehrotra predictor-corrector on the LP form of weighted LAD.

    Primal ``min w'(u+v)`` s.t. ``Yc + u - v = x``, ``u, v >= 0``; dual
    ``max x'y`` s.t. ``Y'y = 0``, ``|y| <= w``. Newton systems reduce to
    ``p(q+1)``-square normal equations.
    """
    n = x.shape[0]
    e = x - Y @ c0
    delta = max(1e-3 * float(np.mean(np.abs(e))), 1e-12 * float(np.max(np.abs(x))), 1e-300)
    c = c0.copy()
    u = np.maximum(e, 0.0) + delta
    v = np.maximum(-e, 0.0) + delta
    y = np.zeros(n)
    # slacks of |y| <= w carried explicitly; w - y cancels badly near the bound
    s = w.copy()
    t = w.copy()
    scale = 1.0 + float(np.sum(w * np.abs(x)))

    def newton(r_p, r_d, r_u, r_v, s, t):
        D = u / s + v / t
        g = r_p - r_u / s + r_v / t
        YD = Y / D[:, None]
        M = Y.T @ YD
        rhs = YD.T @ g - r_d
        M[np.diag_indices_from(M)] += 1e-14 * np.trace(M) / M.shape[0]
        try:
            dc = sla.solve(M, rhs, assume_a="pos", check_finite=False)
        except (np.linalg.LinAlgError, ValueError):
            dc = np.linalg.lstsq(M, rhs, rcond=None)[0]
        dy = (g - Y @ dc) / D
        du = (r_u + u * dy) / s
        dv = (r_v - v * dy) / t
        return dc, dy, du, dv

    it = 0
    for it in range(1, max_iter + 1):
        r_p = x - Y @ c - u + v
        r_d = -(Y.T @ y)
        primal = float(w @ (u + v))
        dual = float(x @ y)
        mu = (u @ s + v @ t) / (2 * n)
        if abs(primal - dual) <= tol * scale and np.linalg.norm(r_p) <= 1e-9 * (1 + np.linalg.norm(x)):
            break
        if mu <= 1e-15 * scale / n:
            break
        # predictor
        dc, dy, du, dv = newton(r_p, r_d, -u * s, -v * t, s, t)
        ds, dt = -dy, dy
        ap = min(_step_length(u, du), _step_length(v, dv))
        ad = min(_step_length(s, ds), _step_length(t, dt))
        mu_aff = ((u + ap * du) @ (s + ad * ds) + (v + ap * dv) @ (t + ad * dt)) / (2 * n)
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
        # corrector
        r_u = sigma * mu - u * s - du * ds
        r_v = sigma * mu - v * t - dv * dt
        dc, dy, du, dv = newton(r_p, r_d, r_u, r_v, s, t)
        ds, dt = -dy, dy
        ap = 0.995 * min(_step_length(u, du), _step_length(v, dv))
        ad = 0.995 * min(_step_length(s, ds), _step_length(t, dt))
        c = c + ap * dc
        u = u + ap * du
        v = v + ap * dv
        y = y + ad * dy
        s = s + ad * ds
        t = t + ad * dt
    # y is dual feasible up to r_d; report the gap against the true primal value
    gap = max(float(np.sum(w * np.abs(x - Y @ c))) - float(x @ y), 0.0)
    return c, it, gap


def _solve_l1_irls(Y, x, w, c, abs_eps, max_iter, tol):
    """Reweighted least squares with the smoothing shrunk tenfold per stage.

    Each stage runs until the relative objective decrease falls below ``tol``
    (a looser ``1e-6`` before the final stage).
    """
    e = x - Y @ c
    obj = float(np.sum(w * np.abs(e)))
    best_c, best_obj = c, obj
    gap = np.inf
    pos = w > 0
    eps = max(abs_eps, 0.1 * float(np.median(np.abs(e[pos])))) if pos.any() else abs_eps
    it = 0
    while it < max_iter:
        final = eps <= abs_eps
        stage_tol = tol if final else 1e-6
        prev = None
        while it < max_iter:
            it += 1
            u = w / np.sqrt(e * e + eps * eps)
            c = _weighted_normal_solve(Y, x, u)
            e = x - Y @ c
            obj = float(np.sum(w * np.abs(e)))
            # u * e is orthogonal to the columns of Y; rescale into |y| <= w
            y = u * e
            ratio = float(np.max(np.abs(y[pos]) / w[pos]))
            y = np.where(pos, y / max(1.0, ratio), 0.0)
            if obj < best_obj:
                best_c, best_obj = c, obj
            gap = min(gap, max(best_obj - float(x @ y), 0.0))
            if gap <= GAP_TOL * best_obj:
                return best_c, it, gap, True
            if prev is not None and abs(prev - obj) <= stage_tol * obj:
                break
            prev = obj
        if final:
            return best_c, it, gap, it < max_iter
        eps = max(abs_eps, eps / 10.0)
    return best_c, it, gap, False


def solve_l1(d, method="ipm", max_iter=None, tol=IRLS_TOL, eps=IRLS_EPS):
    """Weighted least absolute deviations: minimize ``sum w[n] |e[n]|``.

    ``method="ipm"`` (default) runs a primal-dual interior-point LP solver;
    ``method="irls"`` runs reweighted least squares on the smoothed objective
    ``sum w sqrt(e^2 + eps^2)`` with ``eps`` relative to the peak amplitude.
    Both start from the weighted L2 solution and finish with an exact solve
    through the rows the optimum interpolates.
    """
    Y, x, w = d.regressors, d.target, d.weights
    scale = float(np.max(np.abs(x))) if x.size else 0.0
    if scale == 0.0 or not np.any(w > 0):
        c = np.zeros(Y.shape[1])
        e, obj = _objective(d, c, 1)
        return FitResult(_as_model(d, c), e, obj, 1, w)

    c0 = _weighted_normal_solve(Y, x, w)
    if method == "ipm":
        keep = w > 0
        c, n_iter, gap = _solve_l1_ipm(Y[keep], x[keep], w[keep], c0, max_iter or 100)
        converged = None
    elif method == "irls":
        c, n_iter, gap, converged = _solve_l1_irls(Y, x, w, c0, eps * scale, max_iter or MAX_ITER, tol)
    else:
        raise ValueError(f"unknown L1 method {method!r}")

    _, obj = _objective(d, c, 1)
    polished = _vertex_polish(d, c)
    if polished is not None:
        _, p_obj = _objective(d, polished, 1)
        if p_obj <= obj:
            c, obj = polished, p_obj
    e, obj = _objective(d, c, 1)
    # a feasible dual bound is (obj - gap_before_polish); polishing only lowers obj
    gap = min(gap, obj)
    bound = _vertex_dual_bound(d, c)
    if bound is not None:
        gap = min(gap, max(obj - bound, 0.0))
    result = FitResult(_as_model(d, c), e, obj, 1, w, n_iter=n_iter, gap=gap)
    loose = gap > GAP_TOL * max(obj, np.finfo(float).tiny) and gap > 1e-12 * scale
    # IRLS has its own stopping rule; it only fails when it runs out of iterations
    if loose and converged is not True:
        raise ConvergenceError(
            f"L1 solver stopped after {n_iter} iterations with relative gap {gap / obj:.3g}",
            result,
            gap,
        )
    return result


def fit(window, weights, cfg):
    """Fit a (time-varying, weighted) predictor on ``window``.

    ``weights=None`` means unit weights. With unit weights and
    ``poly_order=0`` this is covariance-method LP; with QCP weights and
    ``norm=1`` it is TVQCP-L1.
    """
    d = build_design(window, cfg, weights)
    return solve_design(d, cfg.norm)


def solve_design(d, norm):
    return solve_l2(d) if check_norm(norm) == 2 else solve_l1(d)


def eval_coeffs(model, n):
    """``a_k[n]`` for ``k = 1..p`` at in-window sample ``n``."""
    t = model.time(n)
    return model.coef @ (t ** np.arange(model.poly_order + 1))


def wlp_normal_equations(x, history, order, weights=None):
    """Stationary weighted LP straight from the correlation-form normal equations.

    Solves ``sum_k b[i,k] a_k = -b[i,0]`` with
    ``b[i,k] = sum_n w[n] x[n-i] x[n-k]``; an independent path to the
    ``poly_order = 0``, L2 case of :func:`solve_l2`.
    """
    x = check_signal(x)
    n = x.shape[0]
    w = check_weights(weights, n)
    hist = np.zeros(order) if history is None else np.asarray(history, dtype=float)[-order:]
    ext = np.concatenate([np.zeros(order - hist.shape[0]), hist, x])
    B = np.empty((order + 1, order + 1))
    for i in range(order + 1):
        for k in range(order + 1):
            xi = ext[order - i: order - i + n]
            xk = ext[order - k: order - k + n]
            B[i, k] = np.sum(w * xi * xk)
    return np.linalg.solve(B[1:, 1:], -B[1:, 0])


class TimeVaryingLP(BaseEstimator):
    """Estimator wrapper around the time-varying weighted LP fit.

    Parameters
    ----------
    order : int
        Prediction order ``p``.
    poly_order : int
        Degree ``q`` of the coefficient polynomials; 0 gives stationary LP.
    norm : {1, 2}
        Residual norm.

    Attributes
    ----------
    coef_ : ndarray of shape (order, poly_order + 1)
        Basis coefficients ``b[k, i]`` (inverse-filter sign convention).
    residual_ : ndarray
    objective_ : float
    model_ : TvModel
    """

    def __init__(self, order=8, poly_order=3, norm=2):
        self.order = order
        self.poly_order = poly_order
        self.norm = norm

    def fit(self, X, y=None, sample_weight=None, history=None):
        x = check_signal(X, name="X")
        d = design_from_arrays(x, history, self.order, self.poly_order, sample_weight)
        result = solve_design(d, self.norm)
        self.result_ = result
        self.model_ = result.model
        self.coef_ = result.model.coef
        self.residual_ = result.residual
        self.objective_ = result.objective
        self.n_features_in_ = 1
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("TimeVaryingLP is not fitted yet; call fit first")

    def coefficients(self, n=None):
        """Coefficient trajectory (N, p), or the vector at sample ``n``."""
        self._check_fitted()
        if n is None:
            return self.model_.trajectory()
        return eval_coeffs(self.model_, n)

    def predict(self, X, history=None):
        """One-step predictions ``xhat[n]`` over a signal of the fitted length."""
        self._check_fitted()
        x = check_signal(X, name="X")
        if x.shape[0] != self.model_.n_samples:
            raise ValueError("predict expects a signal of the fitted window length")
        d = design_from_arrays(x, history, self.order, self.poly_order)
        return d.regressors @ (-self.coef_.ravel())
