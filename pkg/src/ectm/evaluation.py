"""Prediction metrics, synthetic cycles and profile export."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataIOError, ModelMismatchError, SchemaError
from .identify import COND_LIMIT, condition_number
from .model import (
    CycleData,
    LinearParams,
    Mode,
    PhysicalParams,
    Polynomial,
    feature_matrix,
    params_to_linear,
    simulate_cycle,
    soc_profile,
)

PROFILE_HEADER = ("cycle_index", "t_s", "temp_true_c", "temp_pred_c")


def rmse(pred, truth) -> float:
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape or pred.ndim != 1 or pred.size == 0:
        raise ModelMismatchError(
            f"rmse needs two equal-length non-empty series, got {pred.shape} and {truth.shape}"
        )
    err = pred - truth
    return math.sqrt(float(np.mean(err * err)))


def pearson_r(x, y) -> float:
    """Pearson correlation; NaN when either series is constant."""
    x = np.asarray(x, dtype=float) - np.mean(x)
    y = np.asarray(y, dtype=float) - np.mean(y)
    denom = math.sqrt(float(x @ x) * float(y @ y))
    if denom == 0.0:
        return math.nan
    return min(1.0, max(-1.0, float(x @ y) / denom))


@dataclass(frozen=True, eq=False)
class EvalResult:
    cycle_index: int
    rmse: float
    max_abs_err: float
    pearson_r: float
    mode: Mode
    prediction: np.ndarray = field(default=None, repr=False)

    def row(self) -> dict:
        return {
            "cycle_index": self.cycle_index,
            "rmse": self.rmse,
            "max_abs_err": self.max_abs_err,
            "pearson_r": self.pearson_r,
            "mode": self.mode.value,
        }


def check_model_dt(model_dt: float | None, cycle: CycleData, rtol: float = 0.01) -> None:
    """The decay factor is tied to the sampling interval it was fitted at."""
    if model_dt is not None and abs(cycle.dt - model_dt) > rtol * model_dt:
        raise ModelMismatchError(
            f"cycle {cycle.cycle_index} is sampled at dt={cycle.dt:g} s but the model "
            f"was identified at dt={model_dt:g} s; resample the cycle"
        )


def evaluate_cycle(cycle: CycleData, theta: LinearParams, mode: Mode | str = Mode.FREE_RUNNING) -> EvalResult:
    """Simulate ``cycle`` and score the prediction against measured temperature.

    Metrics cover samples 1..K-1; sample 0 is the measured initial condition
    in both modes and is left out so teacher-forced scores coincide with the
    training residual of a fit on the same cycle.
    """
    mode = Mode(mode)
    pred = simulate_cycle(cycle, theta, mode)
    p, y = pred[1:], cycle.ts[1:]
    return EvalResult(
        cycle_index=cycle.cycle_index,
        rmse=rmse(p, y),
        max_abs_err=float(np.max(np.abs(p - y))),
        pearson_r=pearson_r(p, y),
        mode=mode,
        prediction=pred,
    )


PROFILES = ("constant_current", "cc_cv_like", "random_steps")


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for a synthetic cycle generated by a known parameter vector.

    Voltage follows a smooth open-circuit curve plus ohmic and first-order
    polarization drops; it is deliberately not a polynomial in SOC so the
    voltage feature is not collinear with the heat polynomial.
    """

    theta_true: LinearParams
    input_profile: str = "random_steps"
    noise_sigma: float = 0.0
    length: int = 1000
    seed: int = 0
    dt: float = 5.0
    q0: float = 2.0
    soc0: float = 0.5
    i_max: float = 4.0
    ambient_c: float = 25.0
    ambient_swing_c: float = 0.0
    ts0: float | None = None
    cycle_index: int = 0

    def __post_init__(self):
        if not isinstance(self.theta_true, LinearParams):
            object.__setattr__(self, "theta_true", LinearParams(self.theta_true))
        if self.input_profile not in PROFILES:
            raise SchemaError(f"input_profile must be one of {PROFILES}")
        if self.noise_sigma < 0:
            raise SchemaError("noise_sigma must be non-negative")
        if self.length < 10:
            raise SchemaError("synthetic cycles need at least 10 samples")

    @classmethod
    def from_physical(cls, p: PhysicalParams, dt: float = 5.0, **kwargs) -> "SynthSpec":
        return cls(theta_true=params_to_linear(p, dt), dt=dt, **kwargs)


#: 18650-like cell in still air, used as the default synthetic ground truth
REFERENCE_CELL = PhysicalParams(10.0, 45.0, Polynomial((3.3, 0.8, -0.6, 0.4, 0.1, -0.05)))


def _ocv(soc):
    return 3.0 + 0.9 * soc - 0.25 * soc**2 + 0.12 * np.exp(-12.0 * (1.0 - soc)) - 0.08 * np.exp(-15.0 * soc)


def _current(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    n, dt = spec.length, spec.dt
    coulombs = 3600.0 * spec.q0
    if spec.input_profile == "constant_current":
        sign = 1.0 if spec.soc0 < 0.5 else -1.0
        return np.full(n, sign * 0.5 * spec.i_max)

    if spec.input_profile == "cc_cv_like":
        target = 0.8
        k_switch = int(math.ceil(max(target - spec.soc0, 0.0) * coulombs / (spec.i_max * dt)))
        k_switch = min(k_switch, n)
        k = np.arange(n)
        tau = max((n - k_switch) / 4.0, 1.0)
        return np.where(k < k_switch, spec.i_max, spec.i_max * np.exp(-(k - k_switch) / tau))

    # random steps kept away from the SOC limits so clamping never kicks in
    i = np.empty(n)
    soc, k = spec.soc0, 0
    while k < n:
        dur = int(rng.integers(20, 200))
        if rng.random() < 0.15:
            level = 0.0
        else:
            mag = rng.uniform(0.3, 1.0) * spec.i_max
            if soc > 0.8:
                sign = -1.0
            elif soc < 0.2:
                sign = 1.0
            else:
                sign = rng.choice((-1.0, 1.0))
            room = (0.95 - soc) if sign > 0 else (soc - 0.05)
            dur = max(1, min(dur, int(room * coulombs / (mag * dt))))
            level = sign * mag
        dur = min(dur, n - k)
        i[k : k + dur] = level
        soc += level * dur * dt / coulombs
        k += dur
    return i


def synth_generate(spec: SynthSpec) -> CycleData:
    """Generate a cycle whose temperature is produced by ``spec.theta_true``.

    Inputs are built first, the true model is rolled forward free-running
    from ``ts0`` (ambient by default), then seeded Gaussian noise of
    ``noise_sigma`` is added to the recorded surface temperature.
    """
    rng = np.random.default_rng(spec.seed)
    n, dt = spec.length, spec.dt
    t = np.arange(n) * dt
    i = _current(spec, rng)
    ta = spec.ambient_c + spec.ambient_swing_c * np.sin(2.0 * np.pi * t / (0.6 * n * dt))
    ts0 = spec.ambient_c if spec.ts0 is None else spec.ts0

    base = CycleData(
        t=t, i=i, v=np.zeros(n), ts=np.full(n, ts0), ta=ta, dt=dt, q0=spec.q0,
        soc0=spec.soc0, cycle_index=spec.cycle_index,
        meta={"source": "synthetic", "profile": spec.input_profile, "seed": str(spec.seed)},
    )
    soc = soc_profile(base).values
    a = math.exp(-dt / 30.0)
    polar = np.zeros(n)
    for k in range(1, n):
        polar[k] = a * polar[k - 1] + (1.0 - a) * 0.03 * i[k - 1]
    v = _ocv(soc) + 0.05 * i + polar
    cycle = base.replace(v=v)

    truth = simulate_cycle(cycle, spec.theta_true, Mode.FREE_RUNNING)
    if spec.noise_sigma > 0:
        truth = truth + rng.normal(0.0, spec.noise_sigma, n)
    cycle = cycle.replace(ts=truth)

    cond = condition_number(feature_matrix(cycle, soc, spec.theta_true.degree))
    if cond > COND_LIMIT:
        warnings.warn(
            f"synthetic {spec.input_profile} cycle has collinear features "
            f"(condition number {cond:.3g})",
            stacklevel=2,
        )
    return cycle


def export_profiles(items, path) -> Path:
    """Write ``(CycleData, prediction)`` pairs as a long-format CSV.

    Rows are grouped by cycle index (ascending) and time-sorted within each
    group; floats use shortest round-trip formatting.
    """
    if not items:
        raise SchemaError("nothing to export")
    path = Path(path)
    ordered = sorted(items, key=lambda item: item[0].cycle_index)
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(PROFILE_HEADER)
            for cycle, pred in ordered:
                pred = np.asarray(pred, dtype=float)
                if pred.shape != cycle.t.shape:
                    raise ModelMismatchError(
                        f"prediction for cycle {cycle.cycle_index} has {pred.size} values, "
                        f"cycle has {len(cycle)}"
                    )
                order = np.argsort(cycle.t, kind="stable")
                for k in order:
                    w.writerow([
                        cycle.cycle_index,
                        repr(float(cycle.t[k])),
                        repr(float(cycle.ts[k])),
                        repr(float(pred[k])),
                    ])
    except OSError as exc:
        raise DataIOError(f"cannot write {path}: {exc.strerror or exc}") from None
    return path


def read_profiles(path) -> dict:
    """Inverse of :func:`export_profiles`: cycle index -> (t, true, pred) arrays."""
    groups = {}
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            if tuple(next(reader)) != PROFILE_HEADER:
                raise SchemaError(f"{path}: not a profile file")
            for row in reader:
                groups.setdefault(int(row[0]), []).append([float(x) for x in row[1:]])
    except OSError as exc:
        raise DataIOError(f"cannot read {path}: {exc.strerror or exc}") from None
    return {k: tuple(np.array(v).T) for k, v in groups.items()}
