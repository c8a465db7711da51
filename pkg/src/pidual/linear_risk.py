"""Fixed-design linear risk analysis of the gated estimator versus OLS.

Targets are generated as

    y = clean_mask * (X @ feature_coef) + (1 - clean_mask) * (A @ pi_coef) + noise

with additive Gaussian noise of scale ``noise_std``. Risk is the expected
mean squared error on fresh clean targets, with the design held fixed:

    R(theta) = (1/n1) * ||clean_mask * X @ (theta - feature_coef)||^2 + sigma^2

where n1 counts the clean rows. Both estimators admit closed-form expected
risks (a bias term driven by the gap X@feature_coef - A@pi_coef, a variance
trace term, and the irreducible sigma^2); ``monte_carlo_risk`` estimates the
same expectation by resampling the training noise and refitting, which is the
independent oracle the closed forms are checked against.

All solves go through factorizations (SVD least squares / dense solve) with a
condition guard of 1e10 on the Gram matrices; explicit inverses are never
formed.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, NumericError, SetupError
from .seeding import derive_seed

COND_LIMIT = 1e10  # on Gram matrices, i.e. squared design condition
_MC_CHUNK = 4096

ESTIMATOR_OLS = "ols"
ESTIMATOR_PIDUAL = "pidual"


@dataclass
class LinearRiskSetup:
    """Fixed design matrices, ground-truth coefficients, clean mask, noise."""

    features: np.ndarray  # (n, d)
    pi: np.ndarray  # (n, m)
    feature_coef: np.ndarray  # (d,)
    pi_coef: np.ndarray  # (m,)
    clean_mask: np.ndarray  # (n,) bool; True = clean row
    noise_std: float

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def n_clean(self) -> int:
        return int(self.clean_mask.sum())

    @property
    def n_noisy(self) -> int:
        return self.n - self.n_clean

    @property
    def contribution_gap(self) -> np.ndarray:
        """Per-row gap between the feature-path and PI-path contributions."""
        return self.features @ self.feature_coef - self.pi @ self.pi_coef

    def clean_targets(self) -> np.ndarray:
        return self.clean_mask * (self.features @ self.feature_coef)

    def noiseless_targets(self) -> np.ndarray:
        return self.clean_mask * (self.features @ self.feature_coef) + (
            ~self.clean_mask
        ) * (self.pi @ self.pi_coef)

    def sample_targets(self, rng: np.random.Generator) -> np.ndarray:
        return self.noiseless_targets() + self.noise_std * rng.standard_normal(self.n)


@dataclass
class RiskBreakdown:
    bias_term: float
    variance_term: float
    irreducible: float

    @property
    def total(self) -> float:
        return self.bias_term + self.variance_term + self.irreducible


@dataclass
class RiskComparison:
    ols: RiskBreakdown
    pidual: RiskBreakdown
    pidual_preferred: bool
    trace_ols: float
    trace_pidual: float
    trace_ols_heuristic: float  # d * n1 / n, reported only as a diagnostic
    trace_pidual_heuristic: float  # d * n1 / n_selected


def make_setup(
    n: int,
    d: int,
    m: int,
    n_clean: int,
    noise_std: float,
    seed: int,
    coef_scale: float = 1.0,
    pi_coef_scale: float = 1.0,
    min_singular: float = 1e-6,
    max_tries: int = 5,
) -> LinearRiskSetup:
    """Standard-Gaussian designs, rescaled to meet a minimum-singular-value
    floor (retried when a draw is exactly rank-deficient)."""
    if n <= d + m:
        raise SetupError(f"need n > d + m, got n={n}, d={d}, m={m}")
    if not 1 <= n_clean <= n:
        raise SetupError("n_clean must lie in [1, n]")
    if noise_std < 0:
        raise SetupError("noise_std must be >= 0")
    rng = np.random.default_rng(derive_seed(seed, "setup"))
    designs = []
    for cols in (d, m):
        mat = None
        for _ in range(max_tries):
            cand = rng.standard_normal((n, cols))
            smin = np.linalg.svd(cand, compute_uv=False)[-1]
            if smin <= 0:
                continue
            if smin < min_singular:
                cand = cand * (min_singular / smin)
            mat = cand
            break
        if mat is None:
            raise SetupError("conditioning floor unreachable after bounded retries")
        designs.append(mat)
    features, pi = designs
    mask = np.zeros(n, dtype=bool)
    mask[:n_clean] = True
    return LinearRiskSetup(
        features=features,
        pi=pi,
        feature_coef=rng.standard_normal(d) * coef_scale,
        pi_coef=rng.standard_normal(m) * pi_coef_scale,
        clean_mask=mask,
        noise_std=float(noise_std),
    )


def corrupt_mask(mask: np.ndarray, flips: int, seed: int) -> np.ndarray:
    """Flip ``flips`` randomly chosen entries of a boolean mask."""
    mask = np.asarray(mask, dtype=bool)
    if not 0 <= flips <= mask.size:
        raise ConfigError("flip count out of range")
    out = mask.copy()
    idx = np.random.default_rng(seed).choice(mask.size, size=flips, replace=False)
    out[idx] = ~out[idx]
    return out


# ---------------------------------------------------------------------------
# Linear algebra helpers (shared by closed forms, estimators and the oracle).
# ---------------------------------------------------------------------------


def _lstsq_guarded(design: np.ndarray, rhs: np.ndarray, what: str) -> np.ndarray:
    """Least-squares solve with full-rank and condition checks."""
    sol, _, rank, svals = np.linalg.lstsq(design, rhs, rcond=None)
    if rank < design.shape[1]:
        raise NumericError(f"{what} is rank-deficient (rank {rank} < {design.shape[1]})")
    cond_gram = (svals[0] / svals[-1]) ** 2
    if cond_gram > COND_LIMIT:
        raise NumericError(f"{what} Gram matrix condition {cond_gram:.2e} exceeds {COND_LIMIT:.0e}")
    return sol


def masked_designs(
    setup: LinearRiskSetup, fit_mask: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Row-masked designs: features on selected rows, PI on the complement."""
    fit_mask = np.asarray(fit_mask, dtype=bool)
    if fit_mask.shape != (setup.n,):
        raise ConfigError("fit mask must have one entry per row")
    x_bar = setup.features * fit_mask[:, None]
    a_bar = setup.pi * (~fit_mask)[:, None]
    return x_bar, a_bar


def pi_projector_basis(a_bar: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the masked-PI column span (empty if all zero)."""
    if not a_bar.any():
        return np.zeros((a_bar.shape[0], 0))
    u, svals, _ = np.linalg.svd(a_bar, full_matrices=False)
    rank = int((svals > svals[0] * 1e-12).sum())
    if rank < a_bar.shape[1]:
        raise NumericError(
            f"masked PI block is rank-deficient (rank {rank} < {a_bar.shape[1]})"
        )
    if (svals[0] / svals[rank - 1]) ** 2 > COND_LIMIT:
        raise NumericError("masked PI Gram matrix is ill-conditioned")
    return u[:, :rank]


def pi_projector(setup: LinearRiskSetup, fit_mask: np.ndarray) -> np.ndarray:
    """The orthogonal projector onto the span of the masked PI columns."""
    _, a_bar = masked_designs(setup, fit_mask)
    basis = pi_projector_basis(a_bar)
    return basis @ basis.T


def projected_features(setup: LinearRiskSetup, fit_mask: np.ndarray) -> np.ndarray:
    """Masked features projected onto the orthocomplement of the masked PI span."""
    x_bar, a_bar = masked_designs(setup, fit_mask)
    basis = pi_projector_basis(a_bar)
    return x_bar - basis @ (basis.T @ x_bar)


# ---------------------------------------------------------------------------
# Estimators.
# ---------------------------------------------------------------------------


def ols_fit(setup: LinearRiskSetup, y: np.ndarray) -> np.ndarray:
    """Least-squares coefficients on the full feature design, ignoring PI."""
    return _lstsq_guarded(setup.features, np.asarray(y, dtype=np.float64), "feature design")


def pidual_fit(setup: LinearRiskSetup, y: np.ndarray, fit_mask: np.ndarray) -> np.ndarray:
    """Feature coefficients of the jointly-fit masked model.

    Rows selected by ``fit_mask`` go to the feature path, the rest to the PI
    path; the feature block is solved after projecting out the masked PI span.
    """
    x_proj = projected_features(setup, fit_mask)
    return _lstsq_guarded(x_proj, np.asarray(y, dtype=np.float64), "projected feature design")


def _fit_batch(
    setup: LinearRiskSetup, targets: np.ndarray, estimator: str, fit_mask: np.ndarray | None
) -> np.ndarray:
    if estimator == ESTIMATOR_OLS:
        return _lstsq_guarded(setup.features, targets, "feature design")
    if estimator == ESTIMATOR_PIDUAL:
        if fit_mask is None:
            raise ConfigError("the gated estimator requires a fit mask")
        x_proj = projected_features(setup, fit_mask)
        return _lstsq_guarded(x_proj, targets, "projected feature design")
    raise ConfigError(f"unknown estimator {estimator!r}")


# ---------------------------------------------------------------------------
# Closed-form expected risks.
# ---------------------------------------------------------------------------


def _trace_solve(gram: np.ndarray, gram_clean: np.ndarray, what: str) -> float:
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise NumericError(f"{what} condition {cond:.2e} exceeds {COND_LIMIT:.0e}")
    return float(np.trace(np.linalg.solve(gram, gram_clean)))


def closed_form_risk_ols(setup: LinearRiskSetup) -> RiskBreakdown:
    """Expected OLS risk: projection-leakage bias + variance trace + sigma^2."""
    x = setup.features
    n1 = setup.n_clean
    gram = x.T @ x
    x_clean = x * setup.clean_mask[:, None]
    gram_clean = x_clean.T @ x_clean
    noisy_gap = (~setup.clean_mask) * setup.contribution_gap
    # clean_mask * Pi_x * noisy_gap, with Pi_x applied via a guarded solve
    proj = x @ _lstsq_guarded(x, noisy_gap, "feature design")
    bias_vec = setup.clean_mask * proj
    bias = float(bias_vec @ bias_vec) / n1
    variance = setup.noise_std**2 / n1 * _trace_solve(gram, gram_clean, "feature Gram")
    return RiskBreakdown(bias, variance, setup.noise_std**2)


def closed_form_risk_pidual(setup: LinearRiskSetup, fit_mask: np.ndarray) -> RiskBreakdown:
    """Expected risk of the gated estimator under an arbitrary fit mask.

    The bias scales only with the disagreements between the fit mask and the
    true clean mask.
    """
    x = setup.features
    n1 = setup.n_clean
    x_proj = projected_features(setup, fit_mask)
    gram_proj = x_proj.T @ x_proj
    x_clean = x * setup.clean_mask[:, None]
    gram_clean = x_clean.T @ x_clean
    disagreement = setup.clean_mask.astype(np.float64) - np.asarray(fit_mask, dtype=np.float64)
    gap_term = disagreement * setup.contribution_gap
    bias_vec = setup.clean_mask * (x @ _lstsq_guarded(x_proj, gap_term, "projected design"))
    bias = float(bias_vec @ bias_vec) / n1
    variance = setup.noise_std**2 / n1 * _trace_solve(gram_proj, gram_clean, "projected Gram")
    return RiskBreakdown(bias, variance, setup.noise_std**2)


# ---------------------------------------------------------------------------
# Monte-Carlo oracle.
# ---------------------------------------------------------------------------


def monte_carlo_risk_stats(
    setup: LinearRiskSetup,
    estimator: str,
    resamples: int,
    seed: int,
    fit_mask: np.ndarray | None = None,
) -> tuple[float, float]:
    """(mean risk, standard error) over fresh training-noise draws.

    Each draw refits the estimator on resampled targets and scores the clean
    rows; the expectation over fresh evaluation noise enters analytically as
    +sigma^2. Draws are generated in fixed chunks with derived substreams, so
    the result is independent of any parallel execution order.
    """
    if resamples < 1:
        raise ConfigError("resamples must be >= 1")
    base = setup.noiseless_targets()
    clean_x = setup.features[setup.clean_mask]
    clean_fit = clean_x @ setup.feature_coef
    n1 = setup.n_clean
    risks = []
    done = 0
    chunk_index = 0
    while done < resamples:
        size = min(_MC_CHUNK, resamples - done)
        rng = np.random.default_rng(derive_seed(seed, "chunk", chunk_index))
        noise = setup.noise_std * rng.standard_normal((setup.n, size))
        targets = base[:, None] + noise
        try:
            coefs = _fit_batch(setup, targets, estimator, fit_mask)
        except NumericError as exc:
            raise NumericError(f"estimator failed on draws [{done}, {done + size}): {exc}") from exc
        residual = clean_x @ coefs - clean_fit[:, None]
        risks.append((residual**2).sum(axis=0) / n1)
        done += size
        chunk_index += 1
    risk_draws = np.concatenate(risks) + setup.noise_std**2
    mean = float(risk_draws.mean())
    stderr = (
        float(risk_draws.std(ddof=1) / np.sqrt(resamples)) if resamples > 1 else 0.0
    )
    return mean, stderr


def monte_carlo_risk(
    setup: LinearRiskSetup,
    estimator: str,
    resamples: int,
    seed: int,
    fit_mask: np.ndarray | None = None,
) -> float:
    return monte_carlo_risk_stats(setup, estimator, resamples, seed, fit_mask)[0]


def compare_risks(setup: LinearRiskSetup, fit_mask: np.ndarray) -> RiskComparison:
    """Closed-form risks of both estimators plus the preference flag."""
    ols = closed_form_risk_ols(setup)
    gated = closed_form_risk_pidual(setup, fit_mask)
    n1 = setup.n_clean
    d = setup.features.shape[1]
    n_selected = int(np.asarray(fit_mask, dtype=bool).sum())
    sigma2 = setup.noise_std**2
    trace_ols = ols.variance_term * n1 / sigma2 if sigma2 > 0 else float("nan")
    trace_gated = gated.variance_term * n1 / sigma2 if sigma2 > 0 else float("nan")
    return RiskComparison(
        ols=ols,
        pidual=gated,
        pidual_preferred=ols.total > gated.total,
        trace_ols=trace_ols,
        trace_pidual=trace_gated,
        trace_ols_heuristic=d * n1 / setup.n,
        trace_pidual_heuristic=d * n1 / n_selected if n_selected else float("nan"),
    )


RISK_CSV_COLUMNS = (
    "setup_id",
    "n",
    "n1",
    "n2",
    "d",
    "m",
    "sigma",
    "ols_bias",
    "ols_var",
    "pidual_bias",
    "pidual_var",
    "ols_total",
    "pidual_total",
    "mc_ols",
    "mc_pidual",
)


def risk_row(
    setup_id: str,
    setup: LinearRiskSetup,
    comparison: RiskComparison,
    mc_ols: float | None,
    mc_pidual: float | None,
) -> list[str]:
    """One CSV row of the risk-comparison export."""

    def fmt(v: float | None) -> str:
        return "" if v is None else repr(float(v))

    return [
        setup_id,
        str(setup.n),
        str(setup.n_clean),
        str(setup.n_noisy),
        str(setup.features.shape[1]),
        str(setup.pi.shape[1]),
        repr(float(setup.noise_std)),
        fmt(comparison.ols.bias_term),
        fmt(comparison.ols.variance_term),
        fmt(comparison.pidual.bias_term),
        fmt(comparison.pidual.variance_term),
        fmt(comparison.ols.total),
        fmt(comparison.pidual.total),
        fmt(mc_ols),
        fmt(mc_pidual),
    ]


def write_risk_csv(path: str | Path, rows: list[list[str]]) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RISK_CSV_COLUMNS)
        writer.writerows(rows)
