"""Self-contained time-series statistics.

Implements the unit-root and cointegration machinery (Phillips-Perron
with Newey-West long-run variance, Engle-Granger on regression
residuals), autoregressive fitting with AIC order selection plus
Gaussian-innovation simulation, and a two-component univariate Gaussian
mixture fit by EM.

Unit-root results carry both the coefficient-scale statistic (z_rho)
and the t-scale statistic (z_t); rejection decisions compare z_rho to
rho-scale critical values, which are configuration data loaded from the
bundled table (the production defaults plus a standard Dickey-Fuller
rho table for cross-checking).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional, Sequence

import numpy as np

DETERMINISTIC_SPECS = ("none", "constant", "constant+trend")

_CRITICAL_TABLE_FILE = "critical_values.txt"


def load_critical_values(table: str) -> dict[float, float]:
    """Critical values {significance level: value} from the bundled table."""
    text = resources.files("tippingmarkets.data").joinpath(_CRITICAL_TABLE_FILE).read_text()
    out: dict[float, float] = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        name, level, value = line.split()
        if name == table:
            out[float(level)] = float(value)
    if not out:
        raise KeyError(f"no critical-value table named {table!r}")
    return out


@dataclass(frozen=True)
class UnitRootResult:
    """Phillips-Perron test output (both statistic scales)."""

    z_rho: float
    z_t: float
    lags: int
    deterministic_spec: str
    n_obs: int

    def __post_init__(self) -> None:
        if self.lags < 0:
            raise ValueError("lags must be nonnegative")
        if self.n_obs <= self.lags + 2:
            raise ValueError("n_obs must exceed lags + 2")
        if self.deterministic_spec not in DETERMINISTIC_SPECS:
            raise ValueError(f"unknown deterministic spec {self.deterministic_spec!r}")

    def as_dict(self) -> dict:
        return {
            "z_rho": self.z_rho,
            "z_t": self.z_t,
            "lags": self.lags,
            "deterministic_spec": self.deterministic_spec,
            "n_obs": self.n_obs,
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True)


@dataclass(frozen=True)
class CointegrationResult:
    """Engle-Granger output: residual unit-root test plus the regression."""

    residual_test: UnitRootResult
    intercept: float
    slope: float
    spec: str  # "estimated" | "imposed"
    critical_values: dict[float, float] = field(compare=False)

    def __post_init__(self) -> None:
        levels = sorted(self.critical_values)
        values = [self.critical_values[l] for l in levels]
        if not all(a < b for a, b in zip(values, values[1:])):
            raise ValueError("critical values must be strictly ordered across levels")

    def rejects_at(self, level: float) -> bool:
        """True when the residual z_rho falls below the critical value."""
        if level not in self.critical_values:
            raise KeyError(f"no critical value for level {level}")
        return self.residual_test.z_rho < self.critical_values[level]

    def as_dict(self) -> dict:
        return {
            "residual_test": self.residual_test.as_dict(),
            "intercept": self.intercept,
            "slope": self.slope,
            "spec": self.spec,
            "critical_values": {str(l): v for l, v in sorted(self.critical_values.items())},
            "rejects": {str(l): self.rejects_at(l) for l in sorted(self.critical_values)},
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True)


@dataclass(frozen=True)
class ARModel:
    """Autoregression y_t = intercept + sum_i coefficients[i] * y_{t-1-i} + eps."""

    order: int
    intercept: float
    coefficients: np.ndarray
    noise_variance: float
    aic: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "coefficients", np.asarray(self.coefficients, dtype=float))
        if self.order < 1 or len(self.coefficients) != self.order:
            raise ValueError("order must be >= 1 and match the coefficient count")
        if self.noise_variance < 0:
            raise ValueError("noise_variance must be nonnegative")

    def stationary_mean(self) -> float:
        denom = 1.0 - float(np.sum(self.coefficients))
        if abs(denom) < 1e-12:
            raise ValueError("model has a unit root; no stationary mean")
        return self.intercept / denom

    def as_dict(self) -> dict:
        return {
            "order": self.order,
            "intercept": self.intercept,
            "coefficients": self.coefficients.tolist(),
            "noise_variance": self.noise_variance,
            "aic": self.aic,
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True)


@dataclass(frozen=True)
class GmmFit:
    """Two-component univariate Gaussian mixture, means ascending."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    log_likelihood: float
    iterations: int
    n_samples: int

    def __post_init__(self) -> None:
        for name in ("weights", "means", "variances"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.weights.shape != (2,) or self.means.shape != (2,) or self.variances.shape != (2,):
            raise ValueError("exactly two components required")
        if not np.all((self.weights > 0) & (self.weights < 1)):
            raise ValueError("weights must lie in (0, 1)")
        if abs(float(self.weights.sum()) - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1")
        if not np.all(self.variances > 0):
            raise ValueError("variances must be positive")
        if self.means[0] > self.means[1]:
            raise ValueError("means must be ascending")

    def means_separated(self, z: float = 3.0) -> bool:
        """Whether the component means differ by more than z pooled
        standard deviations (a False flags a degenerate single-mode
        fit, where EM splits one population into overlapping halves)."""
        pooled_sd = math.sqrt(0.5 * float(self.variances.sum()))
        return abs(self.means[1] - self.means[0]) > z * pooled_sd

    def as_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "variances": self.variances.tolist(),
            "log_likelihood": self.log_likelihood,
            "iterations": self.iterations,
            "n_samples": self.n_samples,
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True)


def newey_west_lrv(residuals: Sequence[float] | np.ndarray, lags: int) -> float:
    """Bartlett-kernel long-run variance of a (mean-zero) series.

    gamma_0 + 2 * sum_{j<=lags} (1 - j/(lags+1)) gamma_j with uncentered
    autocovariances gamma_j = sum_t u_t u_{t-j} / n.
    """
    u = np.asarray(residuals, dtype=float)
    n = len(u)
    if n == 0:
        raise ValueError("empty residual series")
    if lags < 0:
        raise ValueError("lags must be nonnegative")
    if lags >= n:
        raise ValueError("series length must exceed the lag count")
    lrv = float(u @ u) / n
    for j in range(1, lags + 1):
        gamma_j = float(u[j:] @ u[:-j]) / n
        lrv += 2.0 * (1.0 - j / (lags + 1.0)) * gamma_j
    return lrv


def stock_watson_lags(n_obs: int) -> int:
    """Newey-West lag count 0.75 * n^(1/3), rounded half up.

    The epsilon guards representation error in the cube root (e.g.
    1000^(1/3) evaluates just under 10, but 7.5 must round to 8).
    """
    if n_obs < 8:
        raise ValueError("need at least 8 observations")
    return int(math.floor(0.75 * n_obs ** (1.0 / 3.0) + 0.5 + 1e-9))


def _ols(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Least squares with an explicit singularity check."""
    beta, _, rank, _ = np.linalg.lstsq(x, y, rcond=None)
    if rank < x.shape[1]:
        raise ValueError("singular regressor matrix")
    resid = y - x @ beta
    xtx_inv = np.linalg.inv(x.T @ x)
    return beta, resid, xtx_inv


def pp_test(
    series: Sequence[float] | np.ndarray,
    lags: Optional[int] = None,
    deterministic_spec: str = "constant",
) -> UnitRootResult:
    """Phillips-Perron unit-root test.

    Fits y_t on y_{t-1} plus the chosen deterministic terms, then
    corrects both the coefficient statistic and the t statistic for
    serial correlation with the Newey-West long-run variance at `lags`
    (default: the 0.75 n^(1/3) rule).
    """
    y = np.asarray(series, dtype=float)
    if deterministic_spec not in DETERMINISTIC_SPECS:
        raise ValueError(f"unknown deterministic spec {deterministic_spec!r}")
    if lags is None:
        lags = stock_watson_lags(len(y))
    if len(y) <= lags + 5:
        raise ValueError("series too short for the requested lag count")
    if np.all(y == y[0]):
        raise ValueError("series is constant")

    lhs = y[1:]
    n = len(lhs)
    cols = [y[:-1]]
    if deterministic_spec in ("constant", "constant+trend"):
        cols.append(np.ones(n))
    if deterministic_spec == "constant+trend":
        cols.append(np.arange(1, n + 1, dtype=float))
    x = np.column_stack(cols)

    beta, u, xtx_inv = _ols(x, lhs)
    k = x.shape[1]
    rho = float(beta[0])
    rss = float(u @ u)
    s2 = rss / (n - k)
    gamma0 = rss / n
    lam2 = newey_west_lrv(u, lags)
    se_rho2 = s2 * float(xtx_inv[0, 0])
    if se_rho2 <= 0 or lam2 <= 0:
        raise ValueError("degenerate regression: zero residual variance")
    se_rho = math.sqrt(se_rho2)

    z_rho = n * (rho - 1.0) - 0.5 * (n**2 * se_rho2 / s2) * (lam2 - gamma0)
    z_t = math.sqrt(gamma0 / lam2) * (rho - 1.0) / se_rho - 0.5 * (
        (lam2 - gamma0) / math.sqrt(lam2)
    ) * (n * se_rho / math.sqrt(s2))

    return UnitRootResult(
        z_rho=z_rho, z_t=z_t, lags=lags, deterministic_spec=deterministic_spec, n_obs=n
    )


def engle_granger(
    y: Sequence[float] | np.ndarray,
    x: Sequence[float] | np.ndarray,
    lags: Optional[int] = None,
    spec: str = "estimated",
    critical_values: Optional[dict[float, float]] = None,
) -> CointegrationResult:
    """Engle-Granger cointegration test via a residual unit-root test.

    spec="estimated" regresses y on a constant and x and tests the
    residuals (no deterministic terms); spec="imposed" takes the
    residual as y - x directly (unit cointegrating vector).  Critical
    values default to the bundled production table.
    """
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    if y.shape != x.shape:
        raise ValueError("series must have equal length")
    if spec == "estimated":
        design = np.column_stack([np.ones(len(x)), x])
        beta, resid, _ = _ols(design, y)
        intercept, slope = float(beta[0]), float(beta[1])
    elif spec == "imposed":
        intercept, slope = 0.0, 1.0
        resid = y - x
    else:
        raise ValueError(f"unknown spec {spec!r}")
    if critical_values is None:
        critical_values = load_critical_values("engle_granger_rho")
    residual_test = pp_test(resid, lags=lags, deterministic_spec="none")
    return CointegrationResult(
        residual_test=residual_test,
        intercept=intercept,
        slope=slope,
        spec=spec,
        critical_values=dict(critical_values),
    )


def fit_ar(
    series: Sequence[float] | np.ndarray,
    max_order: int = 5,
    use_constant: bool = True,
) -> ARModel:
    """Least-squares AR fit with AIC order selection over 1..max_order.

    All candidate orders are fit on the common sample conditioning on
    the first max_order values, so their AICs are comparable:
    AIC = n ln(RSS/n) + 2k with k = order + (constant flag).  The noise
    variance is the ML estimate RSS/n of the selected model.
    """
    y = np.asarray(series, dtype=float)
    if max_order < 1:
        raise ValueError("max_order must be >= 1")
    n_common = len(y) - max_order
    if n_common < max_order + 5:
        raise ValueError("series too short for the requested max_order")

    lhs = y[max_order:]
    best: Optional[ARModel] = None
    for order in range(1, max_order + 1):
        cols = [y[max_order - lag : len(y) - lag] for lag in range(1, order + 1)]
        if use_constant:
            cols.append(np.ones(n_common))
        x = np.column_stack(cols)
        beta, resid, _ = _ols(x, lhs)
        rss = float(resid @ resid)
        k = order + int(use_constant)
        aic = n_common * math.log(max(rss / n_common, 1e-300)) + 2.0 * k
        model = ARModel(
            order=order,
            intercept=float(beta[order]) if use_constant else 0.0,
            coefficients=beta[:order],
            noise_variance=rss / n_common,
            aic=aic,
        )
        if best is None or aic < best.aic:
            best = model
    assert best is not None
    return best


def simulate_ar(
    model: ARModel,
    horizon: int,
    n_paths: int,
    rng: np.random.Generator,
    initial_history: Sequence[float] | np.ndarray,
) -> np.ndarray:
    """Gaussian-innovation forward simulation, shape (n_paths, horizon).

    All paths share the tail of `initial_history` as starting lags;
    innovations are drawn one time step at a time across paths, so a
    fixed seed reproduces identical paths.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    history = np.asarray(initial_history, dtype=float)
    if len(history) < model.order:
        raise ValueError("initial history shorter than the model order")
    sigma = math.sqrt(model.noise_variance)
    # lags[:, 0] is y_{t-1}, lags[:, i] is y_{t-1-i}
    lags = np.tile(history[-model.order :][::-1], (n_paths, 1))
    out = np.empty((n_paths, horizon))
    for t in range(horizon):
        mean = model.intercept + lags @ model.coefficients
        eps = rng.standard_normal(n_paths) * sigma if sigma > 0 else 0.0
        y_t = mean + eps
        out[:, t] = y_t
        if model.order > 1:
            lags[:, 1:] = lags[:, :-1]
        lags[:, 0] = y_t
    return out


def _gmm_log_likelihood(
    x: np.ndarray, w: np.ndarray, mu: np.ndarray, var: np.ndarray
) -> tuple[float, np.ndarray]:
    """Total log likelihood and responsibilities of a 2-mixture."""
    log_comp = (
        np.log(w)
        - 0.5 * np.log(2.0 * np.pi * var)
        - (x[:, None] - mu) ** 2 / (2.0 * var)
    )
    top = log_comp.max(axis=1, keepdims=True)
    log_norm = top[:, 0] + np.log(np.exp(log_comp - top).sum(axis=1))
    resp = np.exp(log_comp - log_norm[:, None])
    return float(log_norm.sum()), resp


def fit_gmm2(
    samples: Sequence[float] | np.ndarray,
    tol: float = 1e-9,
    max_iter: int = 500,
    rng: Optional[np.random.Generator] = None,
) -> GmmFit:
    """EM fit of a two-component univariate Gaussian mixture.

    Initialization splits the sample at its median; convergence is a
    log-likelihood gain below `tol`.  A component variance falling
    under the floor (1e-6 of the sample variance) triggers one restart
    from a perturbed initialization, then an error.  The log likelihood
    is checked to be nondecreasing across iterations.
    """
    x = np.asarray(samples, dtype=float)
    if len(x) < 10:
        raise ValueError("need at least 10 samples")
    sample_var = float(np.var(x))
    if sample_var <= 0:
        raise ValueError("samples have no spread")
    floor = 1e-6 * sample_var
    if rng is None:
        rng = np.random.default_rng(0)

    def initial() -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        med = np.median(x)
        lower, upper = x[x <= med], x[x > med]
        if len(upper) == 0:  # ties at the median swallowed one half
            lower, upper = x[x < med], x[x >= med]
        mu = np.array([lower.mean(), upper.mean()])
        var = np.array([max(float(np.var(lower)), floor), max(float(np.var(upper)), floor)])
        return np.array([0.5, 0.5]), mu, var

    w, mu, var = initial()
    restarted = False
    ll_prev = -np.inf
    iterations = 0
    for _ in range(max_iter):
        ll, resp = _gmm_log_likelihood(x, w, mu, var)
        if ll < ll_prev - 1e-8:
            raise AssertionError("EM log likelihood decreased")
        iterations += 1
        converged = ll - ll_prev < tol
        ll_prev = ll
        mass = resp.sum(axis=0)
        w = mass / len(x)
        mu = (resp * x[:, None]).sum(axis=0) / mass
        var = (resp * (x[:, None] - mu) ** 2).sum(axis=0) / mass
        if np.any(var < floor):
            if restarted:
                raise ValueError("component variance collapsed twice; aborting")
            restarted = True
            w, mu, var = initial()
            mu = mu + rng.normal(scale=np.sqrt(sample_var) * 0.5, size=2)
            var = np.full(2, sample_var)
            ll_prev = -np.inf
            continue
        if converged:
            break

    ll, _ = _gmm_log_likelihood(x, w, mu, var)
    order = np.argsort(mu)
    w = w[order] / w.sum()
    return GmmFit(
        weights=w,
        means=mu[order],
        variances=var[order],
        log_likelihood=ll,
        iterations=iterations,
        n_samples=len(x),
    )
