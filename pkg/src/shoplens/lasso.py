"""Sparse value regression: l1-penalized linear model solved by cyclic
coordinate descent, alpha selection by cross-validation, and the
drop-smallest-coefficient experiment that fixes the final feature count.

Objective convention: (1 / (2n)) * ||y - b0 - X.b||_2^2 + alpha * ||b||_1
with an unpenalized intercept b0 fixed at mean(y). Alpha values are only
meaningful under this convention and with standardized predictor columns
(population standard deviation, i.e. divide by n not n-1).
"""

from dataclasses import dataclass, field

import numpy as np

from .ingest import PurchaseMatrix


@dataclass
class DesignMatrix:
    x: np.ndarray          # n x p, standardized, Fortran order
    y: np.ndarray          # n responses
    row_ids: list[str]
    col_ids: list[str]
    column_means: np.ndarray
    column_scales: np.ndarray
    dropped_cols: list[str]  # constant columns excluded from x


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-7
    max_iter: int = 10000


@dataclass
class LassoModel:
    alpha: float
    intercept: float
    beta: np.ndarray
    col_ids: list[str]
    n_iter: int
    max_coord_delta: float
    converged: bool
    objective_trace: list[float] = field(default_factory=list)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.intercept + x @ self.beta

    def support(self) -> list[int]:
        return [int(j) for j in np.flatnonzero(self.beta)]


@dataclass(frozen=True)
class SelectionRule:
    slack: float = 0.05


@dataclass
class FeatureRanking:
    ranked: list[tuple[str, float]]  # (stock_code, |beta|), descending
    selected_count: int


@dataclass
class DropExperimentCurve:
    points: list[tuple[int, float]]   # (n_features, holdout mse), n strictly decreasing
    support: list[str]                # initial feature set, in design column order
    dropped: list[str]                # features in the order they were dropped
    betas: dict[str, float]           # fitted coefficients on the support
    ridge_fallback_steps: list[int] = field(default_factory=list)


@dataclass
class DiagnosticsReport:
    actual: np.ndarray
    predicted: np.ndarray
    pp_theoretical: np.ndarray
    pp_empirical: np.ndarray
    degenerate: bool


def standardize(p_matrix, responses) -> DesignMatrix:
    """Center and scale matrix columns; constant columns are removed.

    Scaling uses the population standard deviation so a two-row column
    [0, 2] standardizes exactly to [-1, 1]. Accepts a PurchaseMatrix with a
    customer->response mapping, or a plain array with responses aligned by
    row (rows are then named r0, r1, ...).
    """
    if isinstance(p_matrix, PurchaseMatrix):
        dense = p_matrix.to_dense()
        row_ids = list(p_matrix.row_ids)
        col_ids = list(p_matrix.col_ids)
        missing = [r for r in row_ids if r not in responses]
        if missing:
            raise ValueError(f"rows without a response: {missing}")
        y = np.array([responses[r] for r in row_ids], dtype=float)
    else:
        dense = np.asarray(p_matrix, dtype=float)
        row_ids = [f"r{i}" for i in range(dense.shape[0])]
        col_ids = [f"c{j}" for j in range(dense.shape[1])]
        y = np.asarray(responses, dtype=float)
        if len(y) != dense.shape[0]:
            raise ValueError("rows without a response: response length mismatch")
    if dense.shape[0] < 2:
        raise ValueError(f"need at least 2 rows to standardize, got {dense.shape[0]}")

    means = dense.mean(axis=0)
    scales = dense.std(axis=0)
    keep = np.flatnonzero(scales > 0)
    dropped = [col_ids[j] for j in np.flatnonzero(scales == 0)]
    x = (dense[:, keep] - means[keep]) / scales[keep]
    return DesignMatrix(
        x=np.asfortranarray(x),
        y=y,
        row_ids=row_ids,
        col_ids=[col_ids[j] for j in keep],
        column_means=means[keep],
        column_scales=scales[keep],
        dropped_cols=dropped,
    )


def _soft_threshold(z: float, a: float) -> float:
    if z > a:
        return z - a
    if z < -a:
        return z + a
    return 0.0


def lasso_objective(x: np.ndarray, y: np.ndarray, intercept: float,
                    beta: np.ndarray, alpha: float) -> float:
    n = x.shape[0]
    r = y - intercept - x @ beta
    return float(r @ r / (2 * n) + alpha * np.abs(beta).sum())


def fit_lasso(design: DesignMatrix, alpha: float,
              cfg: SolverConfig = SolverConfig(),
              rows: np.ndarray | None = None,
              warm_start: np.ndarray | None = None) -> LassoModel:
    """Cyclic coordinate descent with exact soft-threshold updates.

    Sweeps alternate between the full coordinate set and the current active
    set; convergence is a full sweep whose largest coefficient change falls
    below cfg.tol. Hitting max_iter is reported via ``converged``, not
    raised. ``rows`` restricts the fit to a row subset (used by
    cross-validation); ``warm_start`` seeds the coefficients.
    """
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    x, y = design.x, design.y
    if rows is not None:
        x, y = x[np.asarray(rows)], y[np.asarray(rows)]
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise ValueError("non-finite values in design")
    x = np.asfortranarray(x)
    n, p = x.shape

    intercept = float(y.mean())
    col_sq = np.einsum("ij,ij->j", x, x) / n
    beta = np.zeros(p) if warm_start is None else np.array(warm_start, dtype=float)
    r = y - intercept - x @ beta

    trace: list[float] = []

    def sweep(indices) -> float:
        max_delta = 0.0
        for j in indices:
            if col_sq[j] == 0.0:
                continue
            old = beta[j]
            rho = x[:, j] @ r / n + col_sq[j] * old
            new = _soft_threshold(rho, alpha) / col_sq[j]
            if new != old:
                r[:] -= x[:, j] * (new - old)
                beta[j] = new
            delta = abs(new - old)
            if delta > max_delta:
                max_delta = delta
        trace.append(float(r @ r / (2 * n) + alpha * np.abs(beta).sum()))
        return max_delta

    all_idx = range(p)
    n_iter = 0
    converged = False
    last_full_delta = np.inf
    while n_iter < cfg.max_iter:
        last_full_delta = sweep(all_idx)
        n_iter += 1
        if last_full_delta < cfg.tol:
            converged = True
            break
        active = np.flatnonzero(beta)
        if active.size == 0:
            continue
        while n_iter < cfg.max_iter:
            delta = sweep(active)
            n_iter += 1
            if delta < cfg.tol:
                break

    return LassoModel(
        alpha=float(alpha),
        intercept=intercept,
        beta=beta,
        col_ids=list(design.col_ids),
        n_iter=n_iter,
        max_coord_delta=float(last_full_delta),
        converged=converged,
        objective_trace=trace,
    )


def kkt_violations(design: DesignMatrix, model: LassoModel,
                   rows: np.ndarray | None = None) -> tuple[float, float]:
    """Largest stationarity violations, (nonzero coords, zero coords).

    At an exact optimum the gradient x_j'r/n equals alpha*sign(beta_j) on
    the support and lies within [-alpha, alpha] off it.
    """
    x, y = design.x, design.y
    if rows is not None:
        x, y = x[np.asarray(rows)], y[np.asarray(rows)]
    n = x.shape[0]
    r = y - model.intercept - x @ model.beta
    g = x.T @ r / n
    nz = model.beta != 0
    viol_nz = float(np.abs(g[nz] - model.alpha * np.sign(model.beta[nz])).max()) if nz.any() else 0.0
    viol_z = float(np.maximum(np.abs(g[~nz]) - model.alpha, 0.0).max()) if (~nz).any() else 0.0
    return viol_nz, viol_z


def max_alpha(design: DesignMatrix, rows: np.ndarray | None = None) -> float:
    """Smallest alpha at which the fitted coefficient vector is all zero."""
    x, y = design.x, design.y
    if rows is not None:
        x, y = x[np.asarray(rows)], y[np.asarray(rows)]
    yc = y - y.mean()
    return float(np.abs(x.T @ yc).max() / x.shape[0])


def default_alpha_grid(design: DesignMatrix, num: int = 100,
                       lo_ratio: float = 1e-4) -> np.ndarray:
    """Log-spaced grid spanning [lo_ratio, 1] x max_alpha."""
    hi = max_alpha(design)
    return hi * np.logspace(np.log10(lo_ratio), 0.0, num)


def cross_validate_alpha(design: DesignMatrix, grid, k: int, seed: int,
                         cfg: SolverConfig = SolverConfig(),
                         rows: np.ndarray | None = None,
                         ) -> tuple[float, list[tuple[float, float]]]:
    """Pick alpha by k-fold cross-validation MSE.

    Fold assignment is a seeded permutation, so identical seeds give
    identical folds. Ties on mean MSE break toward the larger alpha
    (the sparser model). ``rows`` restricts the whole procedure to a row
    subset (e.g. keeping a holdout untouched).
    """
    grid = np.asarray(sorted(set(float(a) for a in grid)))
    if grid.size == 0:
        raise ValueError("empty alpha grid")
    if k < 2:
        raise ValueError(f"need at least 2 folds, got {k}")
    pool = np.arange(len(design.y)) if rows is None else np.asarray(rows)
    rng = np.random.default_rng(seed)
    folds = np.array_split(rng.permutation(pool), k)
    for f in folds:
        if len(f) < 2:
            raise ValueError(f"fold with {len(f)} rows; need at least 2 per fold")

    fold_mse = np.zeros((k, grid.size))
    for fi, test_idx in enumerate(folds):
        train_idx = np.setdiff1d(pool, test_idx)
        warm = None
        for gi in range(grid.size - 1, -1, -1):  # descending alpha, warm-started
            model = fit_lasso(design, grid[gi], cfg, rows=train_idx, warm_start=warm)
            warm = model.beta
            pred = model.predict(design.x[test_idx])
            fold_mse[fi, gi] = np.mean((design.y[test_idx] - pred) ** 2)

    mean_mse = fold_mse.mean(axis=0)
    best_positions = np.flatnonzero(mean_mse == mean_mse.min())
    alpha_best = float(grid[best_positions[-1]])
    return alpha_best, [(float(a), float(m)) for a, m in zip(grid, mean_mse)]


def ols_refit(x: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray, bool]:
    """Least-squares fit with intercept; rank-deficient systems fall back
    to a tiny ridge penalty on the slope coefficients."""
    n, p = x.shape
    a = np.column_stack([np.ones(n), x])
    sol, _, rank, _ = np.linalg.lstsq(a, y, rcond=None)
    fallback = rank < a.shape[1]
    if fallback:
        g = a.T @ a + 1e-8 * np.diag([0.0] + [1.0] * p)
        sol = np.linalg.solve(g, a.T @ y)
    return float(sol[0]), sol[1:], fallback


def drop_experiment(design: DesignMatrix, model: LassoModel,
                    holdout_rows) -> DropExperimentCurve:
    """Holdout error as features leave the model one at a time.

    Starting from the model support, refit ordinary least squares on the
    training rows, record holdout MSE, drop the feature with the smallest
    absolute coefficient (ties drop the lexicographically larger stock
    code), and repeat down to the intercept-only model.
    """
    holdout = np.asarray(sorted(set(int(i) for i in holdout_rows)))
    if holdout.size == 0:
        raise ValueError("empty holdout")
    n = len(design.y)
    train = np.setdiff1d(np.arange(n), holdout)
    if train.size == 0:
        raise ValueError("holdout covers every row; nothing to train on")

    support = model.support()
    if not support:
        raise ValueError("model has no nonzero coefficients")
    survivors = list(support)
    support_codes = [design.col_ids[j] for j in support]
    betas = {design.col_ids[j]: float(model.beta[j]) for j in support}

    x_train, y_train = design.x[train], design.y[train]
    x_hold, y_hold = design.x[holdout], design.y[holdout]

    points: list[tuple[int, float]] = []
    dropped: list[str] = []
    fallback_steps: list[int] = []
    step = 0
    while True:
        intercept, coefs, fellback = ols_refit(x_train[:, survivors], y_train)
        if fellback:
            fallback_steps.append(step)
        pred = intercept + x_hold[:, survivors] @ coefs
        points.append((len(survivors), float(np.mean((y_hold - pred) ** 2))))
        if not survivors:
            break
        min_abs = np.abs(coefs).min()
        tied = [j for j, c in zip(survivors, coefs) if abs(c) == min_abs]
        victim = max(tied, key=lambda j: design.col_ids[j])
        dropped.append(design.col_ids[victim])
        survivors.remove(victim)
        step += 1

    return DropExperimentCurve(points=points, support=support_codes,
                               dropped=dropped, betas=betas,
                               ridge_fallback_steps=fallback_steps)


def select_features(curve: DropExperimentCurve,
                    rule: SelectionRule = SelectionRule()) -> FeatureRanking:
    """Sparsest point whose holdout MSE is within slack of the curve minimum."""
    if not curve.points:
        raise ValueError("empty drop-experiment curve")
    min_mse = min(m for _, m in curve.points)
    threshold = (1.0 + rule.slack) * min_mse
    n_star = min(n for n, m in curve.points if m <= threshold)
    removed = set(curve.dropped[:len(curve.support) - n_star])
    survivors = [c for c in curve.support if c not in removed]
    ranked = sorted(((c, abs(curve.betas[c])) for c in survivors),
                    key=lambda t: (-t[1], t[0]))
    return FeatureRanking(ranked=ranked, selected_count=n_star)


def residual_diagnostics(actual, predicted,
                         standardize_residuals: bool = True) -> DiagnosticsReport:
    """Predicted-vs-actual pairs plus probability-probability coordinates.

    P-P points pair the normal CDF of the sorted (optionally standardized)
    residuals with Hazen plotting positions (i - 0.5) / n. Constant
    residuals make standardization impossible; the report is flagged
    degenerate and carries no P-P points.
    """
    from scipy.stats import norm

    actual = np.asarray(actual, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    if actual.size == 0:
        raise ValueError("empty holdout")
    resid = actual - predicted
    std = resid.std()
    if standardize_residuals and std == 0:
        return DiagnosticsReport(actual, predicted, np.array([]), np.array([]), True)
    z = (resid - resid.mean()) / std if standardize_residuals else resid
    z = np.sort(z)
    n = z.size
    empirical = (np.arange(1, n + 1) - 0.5) / n
    return DiagnosticsReport(actual, predicted, norm.cdf(z), empirical, False)
