"""Mutual-coherence analysis for Kronecker-structured sensing operators.

Exact identities at desk scale plus a Monte Carlo study:

* the Gram of a Kronecker product factors into the Kronecker of the Grams,
  so the KCS coherence is max(mu(phi), mu(psi));
* the row-adaptive (AKCS) Gram has a closed form in terms of the per-row
  factors, evaluated here both entrywise and as a full matrix;
* mu <= c_o * sqrt(2*ln(HW)/(mn)) is the claimed high-probability bound for
  Gaussian row-adaptive operators, checked empirically by the study.

Natural log is used wherever a coherence estimate involves a logarithm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DegenerateColumnError, InvalidDimensionError, UndefinedCoherenceError
from .linalg import as_matrix, derive_seed, element_budget, kron, make_rng, normalize_columns
from .operators import AkcsOperator, gaussian_akcs, gaussian_kcs


def mutual_coherence(a) -> float:
    """Largest |off-diagonal| of the column-normalized Gram of ``a``."""
    a = as_matrix(a)
    if a.shape[1] < 2:
        raise UndefinedCoherenceError(
            f"mutual coherence needs at least 2 columns, got {a.shape[1]}"
        )
    g = gram(a)
    np.fill_diagonal(g, 0.0)
    return float(np.max(np.abs(g)))


def gram(a) -> np.ndarray:
    """Column-normalized Gram matrix; symmetric with unit diagonal."""
    a_hat = normalize_columns(a)
    return a_hat.T @ a_hat


def kron_gram_identity_check(phi, psi, budget: int | None = None) -> float:
    """Max-abs deviation between gram(kron(psi, phi)) and
    kron(gram(psi), gram(phi)); zero in exact arithmetic."""
    phi = as_matrix(phi, "phi")
    psi = as_matrix(psi, "psi")
    lhs = gram(kron(psi, phi, budget=budget))
    rhs = kron(gram(psi), gram(phi), budget=budget)
    return float(np.max(np.abs(lhs - rhs)))


def kcs_coherence_exact(phi, psi) -> float:
    """Coherence of the Kronecker sensing matrix: max of the factor coherences."""
    return max(mutual_coherence(phi), mutual_coherence(psi))


def gaussian_coherence_estimate(n_rows: int, n_cols: int) -> float:
    """sqrt(2*ln(cols)/rows): expected coherence scale of an i.i.d. standard
    normal matrix with that many rows and columns."""
    if n_rows < 1:
        raise InvalidDimensionError(f"need at least 1 row, got {n_rows}")
    if n_cols < 2:
        raise InvalidDimensionError(f"need at least 2 columns, got {n_cols}")
    return math.sqrt(2.0 * math.log(n_cols) / n_rows)


def akcs_gram_entry(op: AkcsOperator, col_a: tuple[int, int], col_b: tuple[int, int]) -> float:
    """Unnormalized Gram entry between materialized columns (i, j) and (k, l).

    Column (i, j) pairs the i-th psi column (i over W) with the j-th phi
    entry (j over H); it stacks phis[r, j] * psis[r, :, i] over rows r.
    The inner product is sum_r phis[r, j] * phis[r, l] * <psis[r, :, i], psis[r, :, k]>.
    """
    i, j = col_a
    k, l = col_b
    height, width = op.image_shape
    for name, idx, limit in (("i", i, width), ("k", k, width), ("j", j, height), ("l", l, height)):
        if not 0 <= idx < limit:
            raise IndexError(f"column index {name}={idx} out of range [0, {limit})")
    psi_dots = np.einsum("rn,rn->r", op.psis[:, :, i], op.psis[:, :, k])
    return float(np.sum(op.phis[:, j] * op.phis[:, l] * psi_dots))


def akcs_gram_matrix(op: AkcsOperator) -> np.ndarray:
    """Full unnormalized HW x HW Gram from the closed form, flat index i*H + j
    (matching the column order of the materialized operator)."""
    height, width = op.image_shape
    psi_grams = np.einsum("rni,rnk->rik", op.psis, op.psis)  # (m, W, W)
    g4 = np.einsum("rik,rj,rl->ijkl", psi_grams, op.phis, op.phis)
    return g4.reshape(width * height, width * height)


def akcs_coherence(op: AkcsOperator) -> float:
    """Coherence of the row-adaptive operator via the closed-form Gram."""
    height, width = op.image_shape
    if height * width < 2:
        raise UndefinedCoherenceError("coherence needs at least 2 columns")
    g = akcs_gram_matrix(op)
    norms = np.sqrt(np.diag(g))
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise DegenerateColumnError(int(zero[0]))
    c = g / np.outer(norms, norms)
    np.fill_diagonal(c, 0.0)
    return float(np.max(np.abs(c)))


def theorem1_bound(m: int, n: int, height: int, width: int, c_o: float = 1.0) -> float:
    """c_o * sqrt(2*ln(HW)/(mn)), the claimed high-probability coherence bound
    for Gaussian row-adaptive operators."""
    if min(m, n, height, width) < 1:
        raise InvalidDimensionError("all dimensions must be positive")
    if height * width < 2:
        raise InvalidDimensionError("need HW >= 2")
    return c_o * math.sqrt(2.0 * math.log(height * width) / (m * n))


# --- Monte Carlo study -------------------------------------------------------

SCHEME_CODES = {"gaussian": 0, "kcs": 1, "akcs": 2}


@dataclass(frozen=True)
class StudyConfig:
    """Dimension grid and trial budget for the coherence study."""

    grid: tuple[tuple[int, int, int, int], ...]  # (m, n, H, W) cells
    trials: int
    seed: int
    c_o: float = 1.0

    def __post_init__(self):
        if self.trials < 1:
            raise InvalidDimensionError(f"trials must be >= 1, got {self.trials}")
        if not self.grid:
            raise InvalidDimensionError("grid must contain at least one cell")
        for cell in self.grid:
            if len(cell) != 4 or min(cell) < 1:
                raise InvalidDimensionError(f"bad grid cell {cell}")
        object.__setattr__(self, "grid", tuple(tuple(int(d) for d in c) for c in self.grid))


@dataclass(frozen=True)
class CoherenceReport:
    scheme: str
    m: int
    n: int
    height: int
    width: int
    trial: int
    seed: int
    mu_empirical: float
    mu_closed_form: Optional[float] = None
    bound: Optional[float] = None


@dataclass(frozen=True)
class CellSummary:
    m: int
    n: int
    height: int
    width: int
    trials: int
    frac_akcs_below_kcs: float
    frac_akcs_within_bound: float
    median_mu_kcs: float
    median_mu_akcs: float
    median_mu_gaussian: float
    bound: float


@dataclass(frozen=True)
class StudyResult:
    config: StudyConfig
    reports: tuple[CoherenceReport, ...]
    summaries: tuple[CellSummary, ...]


def _trial_seed(cfg: StudyConfig, cell_idx: int, trial: int, scheme: str) -> int:
    return derive_seed(cfg.seed, cell_idx, trial, SCHEME_CODES[scheme])


def coherence_study(cfg: StudyConfig) -> StudyResult:
    """Draw Gaussian operators per grid cell and record their coherences.

    Per trial: a dense Gaussian mn x HW matrix (reference for the estimate),
    a KCS pair (exact coherence via the factor maximum), and an AKCS operator
    (closed-form Gram coherence, compared against the c_o bound). Trials are
    keyed by (seed, cell index, trial index), so results are independent of
    evaluation order.
    """
    budget = element_budget()
    for m, n, height, width in cfg.grid:
        if m * n * height * width > budget:
            raise InvalidDimensionError(
                f"cell ({m},{n},{height},{width}) exceeds element budget {budget}"
            )
    reports: list[CoherenceReport] = []
    summaries: list[CellSummary] = []
    for cell_idx, (m, n, height, width) in enumerate(cfg.grid):
        bound = theorem1_bound(m, n, height, width, cfg.c_o)
        mu_k_vals, mu_ak_vals, mu_g_vals = [], [], []
        for trial in range(cfg.trials):
            g_seed = _trial_seed(cfg, cell_idx, trial, "gaussian")
            dense = make_rng(g_seed).standard_normal((m * n, height * width))
            mu_g = mutual_coherence(dense)
            mu_g_vals.append(mu_g)
            reports.append(CoherenceReport(
                "gaussian", m, n, height, width, trial, g_seed, mu_g,
                mu_closed_form=gaussian_coherence_estimate(m * n, height * width)))

            k_seed = _trial_seed(cfg, cell_idx, trial, "kcs")
            kcs = gaussian_kcs(height, width, m, n, k_seed)
            mu_k = kcs_coherence_exact(kcs.phi, kcs.psi)
            mu_k_vals.append(mu_k)
            reports.append(CoherenceReport(
                "kcs", m, n, height, width, trial, k_seed, mu_k,
                mu_closed_form=max(gaussian_coherence_estimate(m, height),
                                   gaussian_coherence_estimate(n, width))))

            a_seed = _trial_seed(cfg, cell_idx, trial, "akcs")
            akcs = gaussian_akcs(height, width, m, n, a_seed)
            mu_ak = akcs_coherence(akcs)
            mu_ak_vals.append(mu_ak)
            reports.append(CoherenceReport(
                "akcs", m, n, height, width, trial, a_seed, mu_ak, bound=bound))

        mu_k_arr = np.array(mu_k_vals)
        mu_ak_arr = np.array(mu_ak_vals)
        summaries.append(CellSummary(
            m, n, height, width, cfg.trials,
            frac_akcs_below_kcs=float(np.mean(mu_ak_arr < mu_k_arr)),
            frac_akcs_within_bound=float(np.mean(mu_ak_arr <= bound)),
            median_mu_kcs=float(np.median(mu_k_arr)),
            median_mu_akcs=float(np.median(mu_ak_arr)),
            median_mu_gaussian=float(np.median(np.array(mu_g_vals))),
            bound=bound,
        ))
    return StudyResult(cfg, tuple(reports), tuple(summaries))


CSV_HEADER = "scheme,m,n,H,W,trial,seed,mu_empirical,mu_closed_form,bound"


def _fmt(value: Optional[float]) -> str:
    return "" if value is None else repr(float(value))


def study_csv_lines(result: StudyResult) -> list[str]:
    """CSV rows (one per scheme and trial) plus '#' summary trailer lines."""
    lines = [CSV_HEADER]
    for r in result.reports:
        lines.append(",".join([
            r.scheme, str(r.m), str(r.n), str(r.height), str(r.width),
            str(r.trial), str(r.seed), repr(r.mu_empirical),
            _fmt(r.mu_closed_form), _fmt(r.bound),
        ]))
    for s in result.summaries:
        lines.append(
            f"# cell m={s.m} n={s.n} H={s.height} W={s.width} trials={s.trials}"
            f" frac_akcs_below_kcs={s.frac_akcs_below_kcs!r}"
            f" frac_akcs_within_bound={s.frac_akcs_within_bound!r}"
            f" median_mu_kcs={s.median_mu_kcs!r}"
            f" median_mu_akcs={s.median_mu_akcs!r}"
            f" median_mu_gaussian={s.median_mu_gaussian!r}"
            f" bound={s.bound!r}"
        )
    return lines


def write_study_csv(path, result: StudyResult) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(study_csv_lines(result)) + "\n")
