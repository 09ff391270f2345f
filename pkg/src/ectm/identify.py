"""One-shot identification of the linear thermal parameters from a single cycle."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import solve_triangular

from .errors import (
    IdentifiabilityError,
    IllConditionedError,
    ModelMismatchError,
    NonConvergenceError,
    SchemaError,
)
from .model import CycleData, LinearParams, feature_labels, feature_matrix, soc_profile

DEFAULT_DEGREE = 5
COND_LIMIT = 1e12


class Solver(str, enum.Enum):
    CLOSED_FORM = "closed_form"
    BOX_CONSTRAINED = "box_constrained"


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    """Regression system ``a @ theta ~ target``.

    Row ``r`` holds the features of sample ``r`` and ``target[r]`` is the
    measured surface temperature of sample ``r + 1``, so a cycle of K samples
    gives K - 1 rows.
    """

    a: np.ndarray
    target: np.ndarray
    col_labels: tuple

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        target = np.asarray(self.target, dtype=float)
        if a.ndim != 2 or target.shape != (a.shape[0],):
            raise SchemaError(f"design matrix {a.shape} does not match target {target.shape}")
        if len(self.col_labels) != a.shape[1]:
            raise SchemaError("one label per column required")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(target))):
            raise SchemaError("design matrix has non-finite entries")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "target", target)
        object.__setattr__(self, "col_labels", tuple(self.col_labels))

    @property
    def shape(self):
        return self.a.shape


@dataclass(frozen=True, eq=False)
class BoxConstraints:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.array(self.lower, dtype=float)
        upper = np.array(self.upper, dtype=float)
        if lower.shape != upper.shape or lower.ndim != 1:
            raise SchemaError("bounds must be vectors of equal length")
        if np.any(np.isnan(lower)) or np.any(np.isnan(upper)):
            raise SchemaError("bounds must not be NaN")
        if np.any(lower > upper):
            j = int(np.argmax(lower > upper))
            raise SchemaError(f"lower bound exceeds upper bound for parameter {j + 1}")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def unbounded(cls, m: int) -> "BoxConstraints":
        return cls(np.full(m, -np.inf), np.full(m, np.inf))

    def __len__(self) -> int:
        return len(self.lower)


@dataclass(frozen=True, eq=False)
class FitReport:
    """Outcome of one identification.

    ``coef`` is the raw solution vector. For thermal-model fits it has
    ``d + 4`` entries and :attr:`theta` wraps it as :class:`LinearParams`;
    the solvers themselves accept design matrices of any width.
    """

    coef: tuple
    rmse_train: float
    condition_number: float
    residual_norm: float
    consistency: float
    solver: Solver
    active_constraints: frozenset = frozenset()
    base_cycle: int | None = None
    dt: float | None = None
    col_labels: tuple = ()
    kkt_residual: float = 0.0
    iterations: int = 0
    objective_history: tuple = field(default=(), repr=False)

    def __post_init__(self):
        object.__setattr__(self, "coef", tuple(float(c) for c in self.coef))

    @property
    def theta(self) -> LinearParams:
        return LinearParams(self.coef)

    @property
    def degree(self) -> int:
        return len(self.coef) - 4

    def to_dict(self) -> dict:
        return {
            "theta": list(self.coef),
            "degree": self.degree,
            "col_labels": list(self.col_labels),
            "rmse_train": self.rmse_train,
            "condition_number": self.condition_number,
            "residual_norm": self.residual_norm,
            "consistency": self.consistency,
            "solver": self.solver.value,
            "active_constraints": sorted(self.active_constraints),
            "base_cycle": self.base_cycle,
            "dt": self.dt,
            "kkt_residual": self.kkt_residual,
            "iterations": self.iterations,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FitReport":
        theta = LinearParams(d["theta"])
        if "degree" in d and d["degree"] != theta.degree:
            raise ModelMismatchError(
                f"report lists degree {d['degree']} but carries {theta.m} parameters"
            )
        return cls(
            coef=theta.theta,
            rmse_train=float(d["rmse_train"]),
            condition_number=float(d["condition_number"]),
            residual_norm=float(d["residual_norm"]),
            consistency=float(d["consistency"]),
            solver=Solver(d["solver"]),
            active_constraints=frozenset(d.get("active_constraints", ())),
            base_cycle=d.get("base_cycle"),
            dt=d.get("dt"),
            col_labels=tuple(d.get("col_labels", feature_labels(theta.degree))),
            kkt_residual=float(d.get("kkt_residual", 0.0)),
            iterations=int(d.get("iterations", 0)),
        )


def _require_samples(cycle: CycleData, minimum: int) -> None:
    if len(cycle) < minimum:
        raise IdentifiabilityError(
            f"cycle {cycle.cycle_index} has {len(cycle)} samples; identifying "
            f"the parameters needs at least {minimum}"
        )


def build_design_matrix(cycle: CycleData, d: int = DEFAULT_DEGREE) -> DesignMatrix:
    """Regression system of one cycle; needs at least as many rows as parameters."""
    if d < 0:
        raise SchemaError("polynomial degree must be non-negative")
    _require_samples(cycle, d + 5)
    soc = soc_profile(cycle)
    return DesignMatrix(feature_matrix(cycle, soc.values, d), cycle.ts[1:], feature_labels(d))


def condition_number(a: np.ndarray) -> float:
    """2-norm condition number from the singular values; inf when singular."""
    s = np.linalg.svd(a, compute_uv=False)
    if s.size == 0 or s[-1] == 0.0:
        return math.inf
    return max(1.0, float(s[0] / s[-1]))


def _collinear_columns(a: np.ndarray, labels) -> list:
    _, _, vt = np.linalg.svd(a, full_matrices=False)
    # weight by column norm: share of each column in the near-vanishing combination
    share = np.abs(vt[-1]) * np.linalg.norm(a, axis=0)
    picked = np.flatnonzero(share >= 0.1 * share.max())
    return [labels[j] for j in picked]


def _consistency(x) -> float:
    return float(abs(x[0] + x[1] - 1.0)) if len(x) >= 2 else math.nan


def _summarize(dm: DesignMatrix, theta: np.ndarray):
    resid = dm.a @ theta - dm.target
    norm = float(np.linalg.norm(resid))
    return norm, norm / math.sqrt(len(resid))


def solve_ols(dm: DesignMatrix, cond_limit: float = COND_LIMIT) -> FitReport:
    """Unconstrained least squares through a QR factorization.

    Raises IllConditionedError, naming the columns that span the near null
    space, when the condition number of ``dm.a`` exceeds ``cond_limit``.
    """
    a, b = dm.a, dm.target
    k, m = a.shape
    if k < m:
        raise IdentifiabilityError(f"{k} rows cannot determine {m} parameters")
    cond = condition_number(a)
    if cond > cond_limit:
        cols = _collinear_columns(a, dm.col_labels)
        raise IllConditionedError(
            f"design matrix condition number {cond:.3g} exceeds {cond_limit:.0e}; "
            f"nearly collinear columns: {', '.join(cols)}",
            columns=cols,
            condition_number=cond,
        )
    q, r = np.linalg.qr(a)
    theta = solve_triangular(r, q.T @ b)
    norm, rmse = _summarize(dm, theta)
    return FitReport(
        coef=theta,
        rmse_train=rmse,
        condition_number=cond,
        residual_norm=norm,
        consistency=_consistency(theta),
        solver=Solver.CLOSED_FORM,
        col_labels=dm.col_labels,
        iterations=1,
    )


def kkt_residual(a, b, x, lower, upper) -> float:
    """Largest violation of the bound-constrained optimality conditions.

    Uses the gradient of ``0.5*||a@x - b||**2``. Free coordinates contribute
    ``|g_j|``; a coordinate sitting on its lower (upper) bound contributes
    only a negative (positive) gradient component, i.e. one that would lower
    the objective by moving into the box.
    """
    g = a.T @ (a @ x - b)
    at_lo = x <= lower
    at_hi = x >= upper
    viol = np.abs(g)
    viol = np.where(at_lo, np.maximum(0.0, -g), viol)
    viol = np.where(at_hi, np.maximum(0.0, g), viol)
    # pinned coordinates (lower == upper) cannot violate anything
    viol = np.where(at_lo & at_hi, 0.0, viol)
    return float(viol.max()) if viol.size else 0.0


def solve_box_constrained(
    dm: DesignMatrix,
    box: BoxConstraints,
    tol: float = 1e-8,
    max_iter: int | None = None,
) -> FitReport:
    """Bounded-variable least squares by an active-set method.

    Starts from the box projection of the origin with no active bounds.
    Each inner step solves least squares over the free coordinates (fixed
    ones held at their bounds) and walks towards that solution until the
    first bound is hit, which then becomes active. Once the free-set
    solution is feasible, the bound whose gradient sign most strongly asks
    to move into the box is released. The problem is convex, so the
    iteration stops at the global minimizer; every step is a convex
    combination towards a subspace minimizer and never raises the objective.

    Parameters
    ----------
    dm : DesignMatrix
    box : BoxConstraints
        Axis-aligned bounds, infinite entries allowed.
    tol : float
        Absolute tolerance on gradient components of ``0.5*||A theta - T||**2``
        used to decide whether a bound should be released.
    max_iter : int, optional
        Cap on least-squares subproblem solves, default ``10*m + 50``.

    Raises
    ------
    NonConvergenceError
        If the cap is reached; carries the last iterate and its KKT residual.
    """
    a, b = dm.a, dm.target
    m = a.shape[1]
    if len(box) != m:
        raise SchemaError(f"box has {len(box)} bounds for {m} parameters")
    if not tol > 0:
        raise ValueError("tol must be positive")
    if max_iter is None:
        max_iter = 10 * m + 50
    lower, upper = box.lower, box.upper

    def objective(x):
        r = a @ x - b
        return float(r @ r)

    x = np.clip(np.zeros(m), lower, upper)
    # 0 free, -1 held at lower bound, +1 held at upper bound
    state = np.zeros(m, dtype=int)
    state[lower == upper] = -1
    history = [objective(x)]
    iterations = 0

    while True:
        while True:
            free = state == 0
            if not free.any():
                break
            iterations += 1
            if iterations > max_iter:
                raise NonConvergenceError(
                    f"active-set solver did not converge in {max_iter} iterations",
                    theta=x.copy(),
                    kkt_residual=kkt_residual(a, b, x, lower, upper),
                )
            rhs = b - a[:, ~free] @ x[~free]
            z = x.copy()
            z[free] = np.linalg.lstsq(a[:, free], rhs, rcond=None)[0]
            below = free & (z < lower)
            above = free & (z > upper)
            if not (below.any() or above.any()):
                x = z
                history.append(objective(x))
                break
            step = z - x
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.full(m, np.inf)
                ratio[below] = (lower[below] - x[below]) / step[below]
                ratio[above] = (upper[above] - x[above]) / step[above]
            alpha = float(np.clip(np.min(ratio), 0.0, 1.0))
            x = np.where(free, x + alpha * step, x)
            hit = np.flatnonzero(ratio <= alpha)
            for j in hit:
                if below[j]:
                    x[j], state[j] = lower[j], -1
                else:
                    x[j], state[j] = upper[j], 1
            # roundoff can leave other coordinates a hair outside the box
            x = np.clip(x, lower, upper)
            history.append(objective(x))

        g = a.T @ (a @ x - b)
        release = np.zeros(m)
        release[state == -1] = -g[state == -1]
        release[state == 1] = g[state == 1]
        release[lower == upper] = 0.0
        j = int(np.argmax(release))
        if release[j] <= tol:
            break
        state[j] = 0

    x = np.clip(x, lower, upper)
    norm, rmse = _summarize(dm, x)
    return FitReport(
        coef=x,
        rmse_train=rmse,
        condition_number=condition_number(a),
        residual_norm=norm,
        consistency=_consistency(x),
        solver=Solver.BOX_CONSTRAINED,
        active_constraints=frozenset(int(j) for j in np.flatnonzero(state)),
        col_labels=dm.col_labels,
        kkt_residual=kkt_residual(a, b, x, lower, upper),
        iterations=iterations,
        objective_history=tuple(history),
    )


def fit_one_shot(
    cycle: CycleData,
    d: int = DEFAULT_DEGREE,
    box: BoxConstraints | None = None,
    tol: float = 1e-8,
    max_iter: int | None = None,
) -> FitReport:
    """Identify theta from a single cycle, unconstrained unless ``box`` is given.

    Requires ``d + 6`` samples, one regression row more than parameters, so
    the training residual carries information.
    """
    if d < 0:
        raise SchemaError("polynomial degree must be non-negative")
    _require_samples(cycle, d + 6)
    dm = build_design_matrix(cycle, d)
    if box is None:
        report = solve_ols(dm)
    else:
        report = solve_box_constrained(dm, box, tol=tol, max_iter=max_iter)
    return replace(report, base_cycle=cycle.cycle_index, dt=cycle.dt)
