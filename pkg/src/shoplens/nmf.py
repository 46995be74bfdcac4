"""Regularized non-negative matrix factorization of the purchase matrix.

The spend matrix is factored as P' ~ W.H (W: customer affinities, H: the
purchase dictionary) by minimizing

    1/2 ||P' - W.H||_F^2
    + alpha_m * l1_ratio * (||W||_1 + ||H||_1)
    + 1/2 * alpha_m * (1 - l1_ratio) * (||W||_F^2 + ||H||_F^2)

with alternating column/row-wise exact coordinate updates (HALS). The
regularization terms are applied exactly as written, with no rescaling by
the matrix dimensions. Hyperparameters are chosen by an imputation
experiment: a seeded third of the stored (positive) entries is held out,
the fit skips them via 0/1 residual weights, and the config with the lowest
mean squared error on the held-out entries wins.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .ingest import PurchaseMatrix


@dataclass(frozen=True)
class NmfConfig:
    k: int
    alpha_m: float = 0.0
    l1_ratio: float = 0.0
    tol: float = 1e-6
    max_iter: int = 500
    seed: int = 0
    init: str = "random_uniform"  # or "nndsvd"

    def validate(self, n: int, m: int) -> None:
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.k > min(n, m):
            raise ValueError(f"k={self.k} exceeds min(n, m) = {min(n, m)}")
        if not 0.0 <= self.l1_ratio <= 1.0:
            raise ValueError(f"l1_ratio must be in [0, 1], got {self.l1_ratio}")
        if self.alpha_m < 0:
            raise ValueError(f"alpha_m must be >= 0, got {self.alpha_m}")
        if self.init not in ("random_uniform", "nndsvd"):
            raise ValueError(f"unknown init {self.init!r}")


@dataclass
class Factorization:
    w: np.ndarray            # n x k, non-negative
    h: np.ndarray            # k x m, non-negative
    objective_trace: list[float]
    converged: bool
    n_iter: int
    row_ids: list[str] | None = None
    col_ids: list[str] | None = None


@dataclass(frozen=True)
class HoldoutMask:
    held_out: tuple[tuple[int, int], ...]
    fraction: float


@dataclass
class GridSearchResult:
    # rows: (k, alpha_m, l1_ratio, imputation_mse); failed cells carry nan
    table: list[tuple[int, float, float, float]]
    best: NmfConfig
    failures: list[tuple[int, float, float, str]] = field(default_factory=list)


def _as_dense(p_prime) -> tuple[np.ndarray, list[str] | None, list[str] | None]:
    if isinstance(p_prime, PurchaseMatrix):
        return p_prime.to_dense(), p_prime.row_ids, p_prime.col_ids
    arr = np.asarray(p_prime, dtype=float)
    return arr, None, None


def make_holdout_mask(p_prime, fraction: float = 1.0 / 3.0,
                      seed: int = 0) -> HoldoutMask:
    """Seeded uniform sample of the stored (positive) entries.

    Structural zeros are absences, not observations, so they are never held
    out; predicting them would swamp the imputation error.
    """
    dense, _, _ = _as_dense(p_prime)
    positions = [(int(i), int(j)) for i, j in zip(*np.nonzero(dense > 0))]
    positions.sort()
    if not positions:
        raise ValueError("matrix has no stored entries to hold out")
    rng = np.random.default_rng(seed)
    count = max(1, round(fraction * len(positions)))
    chosen = rng.choice(len(positions), size=count, replace=False)
    held = tuple(positions[i] for i in sorted(chosen))
    return HoldoutMask(held_out=held, fraction=fraction)


def _weight_matrix(shape: tuple[int, int], mask: HoldoutMask | None) -> np.ndarray | None:
    if mask is None:
        return None
    m = np.ones(shape)
    for i, j in mask.held_out:
        m[i, j] = 0.0
    return m


def objective_value(p_prime, f: Factorization, cfg: NmfConfig,
                    mask: HoldoutMask | None = None) -> float:
    """Full regularized objective; with a mask, held-out residuals weigh 0."""
    dense, _, _ = _as_dense(p_prime)
    resid = dense - f.w @ f.h
    weights = _weight_matrix(dense.shape, mask)
    if weights is not None:
        resid = resid * weights
    l1 = np.abs(f.w).sum() + np.abs(f.h).sum()
    l2 = (f.w ** 2).sum() + (f.h ** 2).sum()
    return float(0.5 * (resid ** 2).sum()
                 + cfg.alpha_m * cfg.l1_ratio * l1
                 + 0.5 * cfg.alpha_m * (1.0 - cfg.l1_ratio) * l2)


def _init_factors(p: np.ndarray, cfg: NmfConfig) -> tuple[np.ndarray, np.ndarray]:
    n, m = p.shape
    if cfg.init == "random_uniform":
        rng = np.random.default_rng(cfg.seed)
        scale = math.sqrt(max(p.mean(), np.finfo(float).tiny) / cfg.k)
        return (scale * rng.uniform(size=(n, cfg.k)),
                scale * rng.uniform(size=(cfg.k, m)))
    # nndsvd (Boutsidis & Gallopoulos): deterministic SVD-based seeding
    u, s, vt = np.linalg.svd(p, full_matrices=False)
    w = np.zeros((n, cfg.k))
    h = np.zeros((cfg.k, m))
    w[:, 0] = np.sqrt(s[0]) * np.abs(u[:, 0])
    h[0, :] = np.sqrt(s[0]) * np.abs(vt[0, :])
    for t in range(1, cfg.k):
        uu, vv = u[:, t], vt[t, :]
        up, un = np.maximum(uu, 0), np.maximum(-uu, 0)
        vp, vn = np.maximum(vv, 0), np.maximum(-vv, 0)
        pos = np.linalg.norm(up) * np.linalg.norm(vp)
        neg = np.linalg.norm(un) * np.linalg.norm(vn)
        if pos >= neg:
            sigma, a, b = pos, up, vp
        else:
            sigma, a, b = neg, un, vn
        if sigma > 0:
            scale = np.sqrt(s[t] * sigma)
            w[:, t] = scale * a / np.linalg.norm(a)
            h[t, :] = scale * b / np.linalg.norm(b)
    return w, h


def fit_nmf(p_prime, cfg: NmfConfig,
            mask: HoldoutMask | None = None) -> Factorization:
    """Alternating exact column/row coordinate updates (HALS).

    Each sweep updates every column of W, then every row of H, by the exact
    minimizer of the (masked) objective with everything else fixed, so the
    objective trace never increases. Stops when the per-iteration objective
    decrease relative to the starting objective falls below cfg.tol.
    """
    dense, row_ids, col_ids = _as_dense(p_prime)
    if np.any(dense < 0):
        raise ValueError("input matrix must be non-negative")
    n, m = dense.shape
    cfg.validate(n, m)

    weights = _weight_matrix(dense.shape, mask)
    # Masked entries never influence the fit: zero them out of the data too.
    data = dense if weights is None else dense * weights

    w, h = _init_factors(data, cfg)
    l1_reg = cfg.alpha_m * cfg.l1_ratio
    l2_reg = cfg.alpha_m * (1.0 - cfg.l1_ratio)

    def regularizers() -> float:
        return (l1_reg * (np.abs(w).sum() + np.abs(h).sum())
                + 0.5 * l2_reg * ((w ** 2).sum() + (h ** 2).sum()))

    def fresh_residual() -> np.ndarray:
        r = data - w @ h
        if weights is not None:
            r *= weights
        return r

    resid = fresh_residual()
    trace = [float(0.5 * (resid ** 2).sum() + regularizers())]
    converged = False
    n_iter = 0
    for n_iter in range(1, cfg.max_iter + 1):
        # W column sweep: for component t, the subproblem is separable by row
        for t in range(cfg.k):
            ht = h[t]
            if weights is None:
                denom = float(ht @ ht) + l2_reg
                if denom == 0.0:
                    new = np.zeros(n)
                else:
                    numer = resid @ ht + w[:, t] * (ht @ ht) - l1_reg
                    new = np.maximum(numer, 0.0) / denom
            else:
                wh2 = weights @ (ht * ht)
                denom = wh2 + l2_reg
                numer = resid @ ht + w[:, t] * wh2 - l1_reg
                new = np.where(denom > 0, np.maximum(numer, 0.0)
                               / np.where(denom > 0, denom, 1.0), 0.0)
            delta = new - w[:, t]
            if np.any(delta):
                outer = np.outer(delta, ht)
                if weights is not None:
                    outer *= weights
                resid -= outer
                w[:, t] = new
        # H row sweep, symmetric
        for t in range(cfg.k):
            wt = w[:, t]
            if weights is None:
                denom = float(wt @ wt) + l2_reg
                if denom == 0.0:
                    new = np.zeros(m)
                else:
                    numer = wt @ resid + (wt @ wt) * h[t] - l1_reg
                    new = np.maximum(numer, 0.0) / denom
            else:
                w2m = (wt * wt) @ weights
                denom = w2m + l2_reg
                numer = wt @ resid + h[t] * w2m - l1_reg
                new = np.where(denom > 0, np.maximum(numer, 0.0)
                               / np.where(denom > 0, denom, 1.0), 0.0)
            delta = new - h[t]
            if np.any(delta):
                outer = np.outer(wt, delta)
                if weights is not None:
                    outer *= weights
                resid -= outer
                h[t] = new

        resid = fresh_residual()  # drop accumulated rounding before scoring
        trace.append(float(0.5 * (resid ** 2).sum() + regularizers()))
        scale = max(abs(trace[0]), np.finfo(float).tiny)
        if (trace[-2] - trace[-1]) / scale < cfg.tol:
            converged = True
            break

    return Factorization(w=w, h=h, objective_trace=trace, converged=converged,
                         n_iter=n_iter, row_ids=row_ids, col_ids=col_ids)


def imputation_mse(p_prime, f: Factorization, mask: HoldoutMask) -> float:
    """Mean squared prediction error over the held-out positions."""
    if not mask.held_out:
        raise ValueError("empty holdout mask")
    dense, _, _ = _as_dense(p_prime)
    recon = f.w @ f.h
    errs = [(dense[i, j] - recon[i, j]) ** 2 for i, j in mask.held_out]
    return float(np.mean(errs))


def grid_search(p_prime, k_range, alpha_grid, l1_grid,
                seed: int = 0, tol: float = 1e-6, max_iter: int = 500,
                init: str = "random_uniform",
                holdout_fraction: float = 1.0 / 3.0) -> GridSearchResult:
    """Imputation-driven hyperparameter search over (k, alpha_m, l1_ratio).

    One shared holdout mask is drawn per search; every grid cell fits with
    that mask and is scored on it. Ties break toward smaller k, then larger
    alpha_m, then larger l1_ratio. A failing cell is recorded and skipped.
    """
    ks = sorted(set(int(k) for k in k_range))
    alphas = sorted(set(float(a) for a in alpha_grid), reverse=True)
    l1s = sorted(set(float(r) for r in l1_grid), reverse=True)
    if not ks or not alphas or not l1s:
        raise ValueError("empty search grid")

    mask = make_holdout_mask(p_prime, fraction=holdout_fraction, seed=seed)
    table: list[tuple[int, float, float, float]] = []
    failures: list[tuple[int, float, float, str]] = []
    best_cfg = None
    best_mse = np.inf
    for k in ks:
        for alpha_m in alphas:
            for l1_ratio in l1s:
                cfg = NmfConfig(k=k, alpha_m=alpha_m, l1_ratio=l1_ratio,
                                tol=tol, max_iter=max_iter, seed=seed, init=init)
                try:
                    f = fit_nmf(p_prime, cfg, mask=mask)
                    mse = imputation_mse(p_prime, f, mask)
                except (ValueError, np.linalg.LinAlgError) as exc:
                    failures.append((k, alpha_m, l1_ratio, str(exc)))
                    table.append((k, alpha_m, l1_ratio, float("nan")))
                    continue
                table.append((k, alpha_m, l1_ratio, mse))
                if mse < best_mse:  # scan order encodes the tie-breaking
                    best_mse = mse
                    best_cfg = cfg
    if best_cfg is None:
        raise ValueError("every grid cell failed")
    return GridSearchResult(table=table, best=best_cfg, failures=failures)


def normalize_dictionary(f: Factorization) -> tuple[np.ndarray, np.ndarray, list[int]]:
    """Unit-length dictionary rows plus the scales that preserve W.H.

    Returns (h_normalized, scales, zero_rows). Multiplying W's columns by
    the scales reproduces the original product exactly; all-zero rows are
    reported and left as zero with scale 1.
    """
    norms = np.linalg.norm(f.h, axis=1)
    zero_rows = [int(i) for i in np.flatnonzero(norms == 0)]
    scales = np.where(norms == 0, 1.0, norms)
    h_normalized = f.h / scales[:, None]
    return h_normalized, scales, zero_rows


def top_items_per_element(h_normalized: np.ndarray, top_n: int,
                          col_ids: list[str] | None = None,
                          ) -> list[list[tuple[str, float]]]:
    """Per dictionary element, the top_n items by weight, descending.

    Ties order by item id so the report is reproducible.
    """
    if top_n < 1:
        raise ValueError(f"top_n must be >= 1, got {top_n}")
    k, m = h_normalized.shape
    ids = col_ids if col_ids is not None else [str(j) for j in range(m)]
    out = []
    for t in range(k):
        ranked = sorted(((ids[j], float(h_normalized[t, j])) for j in range(m)),
                        key=lambda item: (-item[1], item[0]))
        out.append(ranked[:top_n])
    return out
