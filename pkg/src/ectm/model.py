"""Lumped RC thermal model of a battery cell with polynomial heat generation.

The surface temperature obeys the exactly discretized first-order RC update

    Ts[k] = eps*Ts[k-1] + (1 - eps)*Ta[k-1] + (1 - eps)*R_T*h[k-1],
    eps   = exp(-dt / (R_T*C_T)),
    h     = I*(V - eta(SOC)),

where eta is a polynomial in SOC that lumps the open-circuit voltage and the
entropic term. Expanding h makes the update linear in a reparameterized
vector theta against the features

    x = [Ts, Ta, I*V, I, I*SOC, I*SOC**2, ..., I*SOC**d]

which is what the identification routines regress on. Theta is stored in the
all-plus convention ``Ts[k] = theta @ x[k-1]``, so the heat coefficients carry
the minus sign of the heat term.

Temperatures are in degrees Celsius, current in amperes (positive while
charging), voltage in volts, time in seconds, capacity in ampere-hours.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Iterator, Mapping, NamedTuple, Sequence

import numpy as np

from .errors import (
    InvalidCapacityError,
    InvalidIntervalError,
    ModelMismatchError,
    NonInvertibleError,
    NonUniformGridError,
    SchemaError,
)

log = logging.getLogger(__name__)

#: relative deviation of any step from the nominal interval tolerated by the model
GRID_RTOL = 0.01

SOC_MIN = 0.0
SOC_MAX = 1.0


class Mode(str, enum.Enum):
    TEACHER_FORCED = "teacher_forced"
    FREE_RUNNING = "free_running"


class Sample(NamedTuple):
    t: float
    i: float
    v: float
    ts: float
    ta: float


def _frozen(values, name: str) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.ndim != 1:
        raise SchemaError(f"{name} must be one-dimensional")
    if not np.all(np.isfinite(arr)):
        raise SchemaError(f"{name} contains non-finite values")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class CycleData:
    """One charge or discharge cycle sampled on a (nominally) uniform grid.

    Columns are stored as read-only numpy arrays. Construction checks the
    cheap invariants (finite values, strictly increasing non-negative time,
    capacity and initial SOC ranges); uniformity of the grid is checked by
    the operations that depend on it, see :func:`check_uniform_grid`.
    """

    t: np.ndarray
    i: np.ndarray
    v: np.ndarray
    ts: np.ndarray
    ta: np.ndarray
    dt: float
    q0: float
    soc0: float = 0.0
    cycle_index: int = 0
    meta: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        cols = {}
        for name in ("t", "i", "v", "ts", "ta"):
            cols[name] = _frozen(getattr(self, name), name)
            object.__setattr__(self, name, cols[name])
        n = len(cols["t"])
        if any(len(c) != n for c in cols.values()):
            raise SchemaError("cycle columns differ in length")
        if n < 2:
            raise SchemaError(f"cycle {self.cycle_index} has {n} samples, need at least 2")
        if cols["t"][0] < 0:
            raise SchemaError("time must be non-negative")
        if np.any(np.diff(cols["t"]) <= 0):
            raise SchemaError("time must be strictly increasing")
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise InvalidIntervalError(f"nominal dt must be positive, got {self.dt}")
        if not (math.isfinite(self.q0) and self.q0 > 0):
            raise InvalidCapacityError(f"capacity q0 must be positive, got {self.q0}")
        if not 0.0 <= self.soc0 <= 1.0:
            raise SchemaError(f"soc0 must lie in [0, 1], got {self.soc0}")
        object.__setattr__(self, "dt", float(self.dt))
        object.__setattr__(self, "q0", float(self.q0))
        object.__setattr__(self, "soc0", float(self.soc0))
        object.__setattr__(self, "cycle_index", int(self.cycle_index))
        object.__setattr__(self, "meta", dict(self.meta))

    @classmethod
    def from_samples(cls, samples: Sequence[Sample], dt: float, q0: float, **kwargs) -> "CycleData":
        if not samples:
            raise SchemaError("no samples")
        t, i, v, ts, ta = (np.asarray(col, dtype=float) for col in zip(*samples))
        return cls(t=t, i=i, v=v, ts=ts, ta=ta, dt=dt, q0=q0, **kwargs)

    def __len__(self) -> int:
        return len(self.t)

    @property
    def samples(self) -> Iterator[Sample]:
        for row in zip(self.t, self.i, self.v, self.ts, self.ta):
            yield Sample(*map(float, row))

    def replace(self, **changes) -> "CycleData":
        kwargs = {
            name: getattr(self, name)
            for name in ("t", "i", "v", "ts", "ta", "dt", "q0", "soc0", "cycle_index", "meta")
        }
        kwargs.update(changes)
        return CycleData(**kwargs)

    def equals(self, other: "CycleData", atol: float = 0.0) -> bool:
        if not isinstance(other, CycleData) or len(self) != len(other):
            return False
        cols = all(
            np.allclose(getattr(self, n), getattr(other, n), rtol=0.0, atol=atol)
            for n in ("t", "i", "v", "ts", "ta")
        )
        return (
            cols
            and math.isclose(self.dt, other.dt, rel_tol=0.0, abs_tol=atol)
            and self.q0 == other.q0
            and self.soc0 == other.soc0
            and self.cycle_index == other.cycle_index
        )


def check_uniform_grid(t: np.ndarray, dt: float, rtol: float = GRID_RTOL) -> float:
    """Raise NonUniformGridError unless every step is within ``rtol*dt`` of dt.

    Returns the largest relative deviation found.
    """
    if dt <= 0:
        raise InvalidIntervalError(f"dt must be positive, got {dt}")
    steps = np.diff(np.asarray(t, dtype=float))
    if steps.size == 0:
        return 0.0
    jitter = float(np.max(np.abs(steps - dt)) / dt)
    if jitter > rtol:
        k = int(np.argmax(np.abs(steps - dt)))
        raise NonUniformGridError(
            f"sampling grid deviates {jitter:.3%} from dt={dt:g} s at step {k} "
            f"(limit {rtol:.0%}); resample the cycle first"
        )
    return jitter


@dataclass(frozen=True, eq=False)
class SocSeries:
    values: np.ndarray
    clamp_events: int = 0

    def __len__(self) -> int:
        return len(self.values)


def soc_profile(
    cycle: CycleData,
    soc_min: float = SOC_MIN,
    soc_max: float = SOC_MAX,
    method: str = "left",
) -> SocSeries:
    """State of charge by coulomb counting.

    ``method="left"`` integrates the current with the left-rectangle rule,
    ``"trapezoid"`` with the trapezoidal rule. After every step the running
    value is clamped into ``[soc_min, soc_max]``; pass infinite bounds to
    disable clamping.
    """
    if cycle.q0 <= 0:
        raise InvalidCapacityError(f"capacity q0 must be positive, got {cycle.q0}")
    check_uniform_grid(cycle.t, cycle.dt)
    steps = np.diff(cycle.t)
    if method == "left":
        charge = cycle.i[:-1] * steps
    elif method == "trapezoid":
        charge = 0.5 * (cycle.i[:-1] + cycle.i[1:]) * steps
    else:
        raise ValueError(f"unknown integration method {method!r}")
    increments = charge / (3600.0 * cycle.q0)

    values = np.empty(len(cycle))
    values[0] = cycle.soc0
    values[1:] = cycle.soc0 + np.cumsum(increments)
    clamps = 0
    if np.any(values < soc_min) or np.any(values > soc_max):
        # saturating integrator: a clamped value is the base for the next step
        soc = min(max(cycle.soc0, soc_min), soc_max)
        clamps = int(soc != cycle.soc0)
        values[0] = soc
        for k, inc in enumerate(increments, start=1):
            raw = soc + inc
            soc = min(max(raw, soc_min), soc_max)
            clamps += soc != raw
            values[k] = soc
        log.info("cycle %d: SOC clamped at %d samples", cycle.cycle_index, clamps)
    values.flags.writeable = False
    return SocSeries(values=values, clamp_events=int(clamps))


@dataclass(frozen=True)
class Polynomial:
    """Polynomial in SOC, ``coeffs[j]`` multiplies ``soc**j``."""

    coeffs: tuple

    def __post_init__(self):
        coeffs = tuple(float(c) for c in self.coeffs)
        if not coeffs:
            raise SchemaError("polynomial needs at least one coefficient")
        if not all(math.isfinite(c) for c in coeffs):
            raise SchemaError("polynomial coefficients must be finite")
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    def __call__(self, soc):
        return poly_eval(self, soc)


def poly_eval(p: Polynomial, soc):
    """Horner evaluation; works elementwise on arrays."""
    acc = 0.0 * soc
    for c in reversed(p.coeffs):
        acc = acc * soc + c
    return acc


def heat_generation(i, v, soc, eta: Polynomial):
    """Heat rate in watts, ``i*(v - eta(soc))``. Negative values mean cooling."""
    return i * (v - poly_eval(eta, soc))


def _decay(dt: float, r_t: float, c_t: float) -> float:
    if not dt > 0:
        raise InvalidIntervalError(f"dt must be positive, got {dt}")
    return math.exp(-dt / (r_t * c_t))


@dataclass(frozen=True)
class PhysicalParams:
    r_t: float  # K/W
    c_t: float  # J/K
    eta: Polynomial

    def __post_init__(self):
        if not (math.isfinite(self.r_t) and self.r_t > 0):
            raise SchemaError(f"thermal resistance must be positive, got {self.r_t}")
        if not (math.isfinite(self.c_t) and self.c_t > 0):
            raise SchemaError(f"thermal capacitance must be positive, got {self.c_t}")
        if not isinstance(self.eta, Polynomial):
            object.__setattr__(self, "eta", Polynomial(tuple(self.eta)))

    @property
    def time_constant(self) -> float:
        return self.r_t * self.c_t

    def epsilon(self, dt: float) -> float:
        return _decay(dt, self.r_t, self.c_t)


@dataclass(frozen=True)
class LinearParams:
    theta: tuple

    def __post_init__(self):
        theta = tuple(float(x) for x in np.ravel(self.theta))
        if len(theta) < 4:
            raise SchemaError(f"need at least 4 linear parameters, got {len(theta)}")
        if not all(math.isfinite(x) for x in theta):
            raise SchemaError("linear parameters must be finite")
        object.__setattr__(self, "theta", theta)

    @property
    def m(self) -> int:
        return len(self.theta)

    @property
    def degree(self) -> int:
        return self.m - 4

    def as_array(self) -> np.ndarray:
        return np.array(self.theta)


def feature_labels(d: int) -> list:
    return ["ts", "ta", "i*v", "i"] + [
        "i*soc" if j == 1 else f"i*soc^{j}" for j in range(1, d + 1)
    ]


def feature_row(sample_prev: Sample, soc_prev: float, d: int) -> list:
    """Regressors ``[Ts, Ta, I*V, I, I*SOC, ..., I*SOC**d]`` of one sample."""
    if d < 0:
        raise ValueError("polynomial degree must be non-negative")
    i = sample_prev.i
    # 0.0**0 == 1.0 keeps the bare-current column alive at SOC = 0
    return [sample_prev.ts, sample_prev.ta, i * sample_prev.v] + [
        i * soc_prev**j for j in range(d + 1)
    ]


def feature_matrix(cycle: CycleData, soc: np.ndarray, d: int) -> np.ndarray:
    """Stack ``feature_row`` for samples ``0..K-2``; row ``r`` predicts sample ``r+1``."""
    i = cycle.i[:-1]
    s = np.asarray(soc, dtype=float)[:-1]
    cols = [cycle.ts[:-1], cycle.ta[:-1], i * cycle.v[:-1]]
    cols += [i * s**j for j in range(d + 1)]
    return np.column_stack(cols)


def step_linear(features: Sequence[float], theta: LinearParams) -> float:
    if len(features) != theta.m:
        raise ModelMismatchError(
            f"got {len(features)} features for {theta.m} parameters"
        )
    return math.fsum(a * b for a, b in zip(theta.theta, features))


def step_physical(ts_prev: float, ta_prev: float, h_prev: float, p: PhysicalParams, dt: float) -> float:
    eps = p.epsilon(dt)
    gain = 1.0 - eps
    return eps * ts_prev + gain * ta_prev + gain * p.r_t * h_prev


def params_to_linear(p: PhysicalParams, dt: float) -> LinearParams:
    eps = p.epsilon(dt)
    gain = 1.0 - eps
    heat = gain * p.r_t
    return LinearParams((eps, gain, heat) + tuple(-heat * e for e in p.eta.coeffs))


@dataclass(frozen=True)
class Inversion:
    """Physical quantities read back from a linear parameter vector.

    The ambient gain theta_2 is redundant with theta_1 on the physical
    manifold; ``consistency = |theta_1 + theta_2 - 1|`` measures how far an
    unconstrained fit strayed from it. ``issues`` lists every reason the
    recovered values are not a valid physical parameter set.
    """

    r_t: float
    c_t: float
    eta: tuple
    epsilon: float
    consistency: float
    issues: tuple = ()

    @property
    def physical(self) -> bool:
        return not self.issues

    def to_dict(self) -> dict:
        return {
            "r_t": self.r_t,
            "c_t": self.c_t,
            "eta": list(self.eta),
            "epsilon": self.epsilon,
            "consistency": self.consistency,
            "issues": list(self.issues),
        }


def invert_linear(theta: LinearParams, dt: float) -> Inversion:
    """Recover R_T, C_T and eta from theta without insisting they be physical.

    Raises NonInvertibleError only where the algebra breaks down: theta_1
    outside (0, 1) or theta_3 equal to zero.
    """
    if not dt > 0:
        raise InvalidIntervalError(f"dt must be positive, got {dt}")
    th = theta.theta
    eps, heat = th[0], th[2]
    consistency = abs(th[0] + th[1] - 1.0)
    if not 0.0 < eps < 1.0:
        raise NonInvertibleError(
            f"theta_1 = {eps:g} is not a decay factor in (0, 1)",
            {"theta_1": eps, "consistency": consistency},
        )
    if heat == 0.0:
        raise NonInvertibleError(
            "theta_3 = 0 leaves the thermal resistance undetermined",
            {"theta_3": heat, "consistency": consistency},
        )
    tau = -dt / math.log(eps)
    r_t = heat / (1.0 - eps)
    c_t = tau / r_t
    eta = tuple(-x / heat for x in th[3:])
    issues = []
    if r_t <= 0:
        issues.append(f"negative thermal resistance R_T={r_t:.6g}")
    if c_t <= 0:
        issues.append(f"negative thermal capacitance C_T={c_t:.6g}")
    if consistency > 1e-6:
        issues.append(f"theta_1 + theta_2 deviates from 1 by {consistency:.3g}")
    return Inversion(r_t, c_t, eta, eps, consistency, tuple(issues))


def linear_to_physical(theta: LinearParams, dt: float) -> PhysicalParams:
    """Inverse of :func:`params_to_linear`.

    The ambient gain is discarded. Raises NonInvertibleError when the
    recovered resistance or capacitance is not positive; the exception's
    ``diagnostics`` holds the full :class:`Inversion`.
    """
    inv = invert_linear(theta, dt)
    if inv.r_t <= 0 or inv.c_t <= 0:
        raise NonInvertibleError("non-physical parameters: " + "; ".join(inv.issues), inv)
    return PhysicalParams(inv.r_t, inv.c_t, Polynomial(inv.eta))


def simulate_cycle(
    cycle: CycleData,
    theta: LinearParams,
    mode: Mode | str = Mode.FREE_RUNNING,
    soc: SocSeries | None = None,
) -> np.ndarray:
    """Predicted surface temperature for every sample of ``cycle``.

    Element 0 is the measured starting temperature. In teacher-forced mode
    each prediction uses the measured previous temperature (one-step-ahead);
    in free-running mode it uses the model's own previous prediction.
    """
    mode = Mode(mode)
    if not isinstance(theta, LinearParams):
        theta = LinearParams(theta)
    if soc is None:
        soc = soc_profile(cycle)
    feats = feature_matrix(cycle, soc.values, theta.degree)
    th = theta.as_array()
    out = np.empty(len(cycle))
    out[0] = cycle.ts[0]
    if mode is Mode.TEACHER_FORCED:
        out[1:] = feats @ th
        return out

    drive = feats[:, 1:] @ th[1:]
    a = th[0]
    y = out[0]
    for k, u in enumerate(drive.tolist(), start=1):
        y = a * y + u
        out[k] = y
    if not np.all(np.isfinite(out)):
        log.warning("free-running simulation diverged (theta_1 = %g)", a)
    return out
