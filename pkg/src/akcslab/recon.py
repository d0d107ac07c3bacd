"""ISTA / proximal-gradient reconstruction for both operator families.

Each iteration takes a gradient step on the data-fidelity term
0.5 * ||Y - A(X)||_F^2 followed by a denoising step. The bundled denoiser
is soft-thresholding in the orthonormal 2-D DCT domain (the exact proximal
map of t * ||dct2(.)||_1); identity and a small attention-block stage are
pluggable alternatives. A single iteration is exposed as
:func:`unfolded_stage` so a fixed-depth unrolled pipeline composes the
exact same arithmetic as the iterative solver.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np

from .errors import (
    DivergenceError,
    InvalidDimensionError,
    NumericOverflowError,
    ShapeError,
)
from .linalg import as_matrix, dct2, idct2, make_rng
from .operators import Measurement, SensingOperator

DENOISERS = ("identity", "dct_soft_threshold", "toy_blocks")

_DIVERGENCE_WINDOW = 10
_DIVERGENCE_FACTOR = 10.0
_POWER_ITER_SEED = 0x51A7E


@dataclass
class ReconConfig:
    """Iteration budget, step size, threshold and denoiser selection."""

    iterations: int
    rho: float | str = "auto"
    lam: float = 0.0
    denoiser: str = "dct_soft_threshold"
    tolerance: float = 0.0
    record_trace: bool = False
    block_weights: Optional[object] = None  # BlockWeights when denoiser="toy_blocks"
    block_downsample: int = 1

    def __post_init__(self):
        if self.iterations < 1:
            raise InvalidDimensionError(f"iterations must be >= 1, got {self.iterations}")
        if not isinstance(self.rho, str):
            if float(self.rho) <= 0.0:
                raise InvalidDimensionError(f"step size must be positive, got {self.rho}")
        elif self.rho != "auto":
            raise InvalidDimensionError(f"rho must be a positive number or 'auto', got {self.rho!r}")
        if self.lam < 0.0:
            raise InvalidDimensionError(f"threshold must be >= 0, got {self.lam}")
        if self.tolerance < 0.0:
            raise InvalidDimensionError(f"tolerance must be >= 0, got {self.tolerance}")
        if self.denoiser not in DENOISERS:
            raise InvalidDimensionError(f"unknown denoiser {self.denoiser!r}, expected one of {DENOISERS}")
        if self.denoiser == "toy_blocks" and self.block_weights is None:
            raise InvalidDimensionError("denoiser 'toy_blocks' needs block_weights")


@dataclass
class ReconTrace:
    """Per-iteration objective and data-fidelity values (snapshots optional)."""

    objective: list[float] = field(default_factory=list)
    fidelity: list[float] = field(default_factory=list)
    iterates: Optional[list[np.ndarray]] = None
    rho: float = 0.0
    iterations_run: int = 0
    stopped_early: bool = False


def _measurement_array(y) -> np.ndarray:
    if isinstance(y, Measurement):
        return y.y
    return as_matrix(y, "measurement")


def gradient_step(op: SensingOperator, x, y, rho: float) -> np.ndarray:
    """One data-fidelity descent step: X + rho * adjoint(Y - forward(X))."""
    x = as_matrix(x, "iterate")
    y = _measurement_array(y)
    residual = y - op.forward(x)
    u = x + rho * op.adjoint(residual)
    if not np.all(np.isfinite(u)):
        raise NumericOverflowError("gradient step produced non-finite values")
    return u


class LipschitzEstimate(NamedTuple):
    value: float
    converged: bool
    iterations_used: int

    @property
    def auto_step(self) -> float:
        return 1.0 / self.value


def lipschitz_estimate(op: SensingOperator, iterations: int = 200,
                       rng: np.random.Generator | None = None,
                       tol: float = 1e-10) -> LipschitzEstimate:
    """Largest eigenvalue of X -> adjoint(forward(X)) by power iteration.

    That operator is the normal operator of the sensing map, so the value is
    the squared largest singular value of the materialized matrix and 1/value
    is a safe gradient step size. If the Rayleigh quotient has not settled to
    ``tol`` relative change after ``iterations`` rounds, the best estimate is
    returned with ``converged=False``.
    """
    if iterations < 1:
        raise InvalidDimensionError(f"iterations must be >= 1, got {iterations}")
    if rng is None:
        rng = make_rng(_POWER_ITER_SEED)
    x = rng.standard_normal(op.image_shape)
    x /= np.linalg.norm(x)
    value = 0.0
    for it in range(1, iterations + 1):
        z = op.adjoint(op.forward(x))
        new_value = float(np.vdot(x, z))
        norm = np.linalg.norm(z)
        if norm == 0.0:
            return LipschitzEstimate(0.0, True, it)
        x = z / norm
        if abs(new_value - value) <= tol * max(abs(new_value), 1.0):
            return LipschitzEstimate(new_value, True, it)
        value = new_value
    return LipschitzEstimate(value, False, iterations)


def soft_threshold(v, t: float):
    """sign(v) * max(|v| - t, 0), elementwise on arrays, scalar on scalars."""
    if t < 0.0:
        raise InvalidDimensionError(f"threshold must be >= 0, got {t}")
    arr = np.asarray(v, dtype=np.float64)
    out = np.sign(arr) * np.maximum(np.abs(arr) - t, 0.0)
    if np.isscalar(v) or arr.ndim == 0:
        return float(out)
    return out


def prox_dct_l1(u, t: float) -> np.ndarray:
    """Exact proximal map of t * ||dct2(.)||_1 (orthonormal transform)."""
    return idct2(soft_threshold(dct2(u), t))


def _fidelity(op: SensingOperator, x: np.ndarray, y: np.ndarray) -> float:
    residual = y - op.forward(x)
    return 0.5 * float(np.sum(residual * residual))


def _objective(op: SensingOperator, x: np.ndarray, y: np.ndarray, lam: float) -> float:
    value = _fidelity(op, x, y)
    if lam > 0.0:
        value += lam * float(np.sum(np.abs(dct2(x))))
    return value


def _resolve_denoiser(cfg: ReconConfig, y: np.ndarray, rho: float) -> Callable[[np.ndarray], np.ndarray]:
    if cfg.denoiser == "identity":
        return lambda u: u
    if cfg.denoiser == "dct_soft_threshold":
        t = rho * cfg.lam
        return lambda u: prox_dct_l1(u, t)
    from .blocks import toy_denoiser_stage

    return lambda u: toy_denoiser_stage(u, y, cfg.block_weights, cfg.block_downsample)


def _resolve_rho(op: SensingOperator, cfg: ReconConfig) -> float:
    if isinstance(cfg.rho, str):
        est = lipschitz_estimate(op)
        if est.value <= 0.0:
            raise NumericOverflowError("cannot derive a step size for a null operator")
        return est.auto_step
    return float(cfg.rho)


def unfolded_stage(op: SensingOperator, y, x_prev, rho_k: float,
                   denoiser: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """One unrolled stage: gradient step, then the stage denoiser."""
    u = gradient_step(op, x_prev, y, rho_k)
    return denoiser(u)


def ista_reconstruct(op: SensingOperator, y, cfg: ReconConfig) -> tuple[np.ndarray, ReconTrace]:
    """Iterate gradient + denoise from the back-projection start adjoint(Y).

    Stops early once the relative iterate change drops below cfg.tolerance;
    raises DivergenceError (carrying the trace) if the objective grows more
    than 10x over any 10-iteration window.
    """
    y_arr = _measurement_array(y)
    if y_arr.shape != op.measurement_shape:
        raise ShapeError(
            f"measurement shape {y_arr.shape} does not match operator {op.measurement_shape}"
        )
    rho = _resolve_rho(op, cfg)
    denoiser = _resolve_denoiser(cfg, y_arr, rho)
    trace = ReconTrace(iterates=[] if cfg.record_trace else None, rho=rho)

    x = op.adjoint(y_arr)
    for _ in range(cfg.iterations):
        x_prev = x
        x = unfolded_stage(op, y_arr, x_prev, rho, denoiser)
        trace.fidelity.append(_fidelity(op, x, y_arr))
        trace.objective.append(_objective(op, x, y_arr, cfg.lam))
        if trace.iterates is not None:
            trace.iterates.append(x.copy())
        trace.iterations_run += 1
        obj = trace.objective
        if (len(obj) > _DIVERGENCE_WINDOW
                and obj[-1] > _DIVERGENCE_FACTOR * obj[-1 - _DIVERGENCE_WINDOW]):
            raise DivergenceError(
                f"objective grew over {_DIVERGENCE_FACTOR}x across "
                f"{_DIVERGENCE_WINDOW} iterations", trace)
        change = np.linalg.norm(x - x_prev) / max(np.linalg.norm(x_prev), 1e-12)
        if change < cfg.tolerance:
            trace.stopped_early = True
            break
    return x, trace
