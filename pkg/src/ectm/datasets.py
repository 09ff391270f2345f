"""Cycle ingestion from CSV exports.

Raw benchmark exports are mapped onto the model's variables through a
:class:`ColumnMap`, cleaned, converted to SI-ish units (seconds, amperes,
volts, degrees Celsius) and put on a uniform time grid. Every tool
downstream reads the canonical cycle CSV::

    t_s,current_a,voltage_v,temp_c,ambient_c

with one row per sample and round-trip exact float formatting.
"""

from __future__ import annotations

import configparser
import csv
import logging
import math
import re
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import DataIOError, EmptyCycleError, InvalidIntervalError, SchemaError
from .model import GRID_RTOL, CycleData, soc_profile

log = logging.getLogger(__name__)

CANONICAL_HEADER = ("t_s", "current_a", "voltage_v", "temp_c", "ambient_c")

_TIME_SCALE = {"s": 1.0, "ms": 1e-3, "h": 3600.0}
_MAX_LISTED = 5


@dataclass(frozen=True)
class ColumnMap:
    time_col: str
    current_col: str
    voltage_col: str
    temp_col: str
    q0_ah: float
    soc0: float = 0.0
    ambient_col: str | None = None
    ambient_const: float | None = None
    time_unit: str = "s"
    temp_unit: str = "C"
    current_sign: str = "as_is"

    def __post_init__(self):
        if (self.ambient_col is None) == (self.ambient_const is None):
            raise SchemaError("set exactly one of ambient_col and ambient_const")
        if self.time_unit not in _TIME_SCALE:
            raise SchemaError(f"time_unit must be one of {sorted(_TIME_SCALE)}, got {self.time_unit!r}")
        if self.temp_unit not in ("C", "K"):
            raise SchemaError(f"temp_unit must be C or K, got {self.temp_unit!r}")
        if self.current_sign not in ("as_is", "flipped"):
            raise SchemaError(f"current_sign must be as_is or flipped, got {self.current_sign!r}")
        if not (math.isfinite(self.q0_ah) and self.q0_ah > 0):
            raise SchemaError(f"q0_ah must be positive, got {self.q0_ah}")
        if not 0.0 <= self.soc0 <= 1.0:
            raise SchemaError(f"soc0 must lie in [0, 1], got {self.soc0}")

    @classmethod
    def canonical(cls, q0_ah: float, soc0: float = 0.0) -> "ColumnMap":
        return cls(
            time_col="t_s",
            current_col="current_a",
            voltage_col="voltage_v",
            temp_col="temp_c",
            ambient_col="ambient_c",
            q0_ah=q0_ah,
            soc0=soc0,
        )

    @classmethod
    def from_mapping(cls, values: dict) -> "ColumnMap":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise SchemaError(f"unknown column map keys: {', '.join(sorted(unknown))}")
        kwargs = dict(values)
        try:
            for key in ("q0_ah", "soc0", "ambient_const"):
                if kwargs.get(key) not in (None, ""):
                    kwargs[key] = float(kwargs[key])
                else:
                    kwargs.pop(key, None)
        except ValueError as exc:
            raise SchemaError(f"column map: {exc}") from None
        if kwargs.get("ambient_col") == "":
            kwargs.pop("ambient_col")
        missing = {"time_col", "current_col", "voltage_col", "temp_col", "q0_ah"} - set(kwargs)
        if missing:
            raise SchemaError(f"column map lacks required keys: {', '.join(sorted(missing))}")
        return cls(**kwargs)

    def to_text(self) -> str:
        lines = [f"{k} = {v}" for k, v in asdict(self).items() if v is not None]
        return "\n".join(lines) + "\n"


def read_kv(path) -> dict:
    """Parse a flat ``key = value`` file (``#`` comments) into a dict of strings."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataIOError(f"cannot read {path}: {exc.strerror or exc}") from None
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string("[top]\n" + text, source=str(path))
    except configparser.Error as exc:
        raise SchemaError(f"{path}: {exc}") from None
    return dict(parser["top"])


def load_column_map(path) -> ColumnMap:
    return ColumnMap.from_mapping(read_kv(path))


@dataclass
class IngestReport:
    rows_read: int = 0
    rows_dropped: int = 0
    clamp_events: int = 0
    dt_nominal: float = math.nan
    dt_jitter_max: float = 0.0
    resampled: bool = False
    warnings: list = field(default_factory=list)

    def lines(self) -> list:
        out = [
            f"rows_read={self.rows_read}",
            f"rows_dropped={self.rows_dropped}",
            f"clamp_events={self.clamp_events}",
            f"dt_nominal={self.dt_nominal!r}",
            f"dt_jitter_max={self.dt_jitter_max!r}",
            f"resampled={str(self.resampled).lower()}",
        ]
        out += [f"warning={w}" for w in self.warnings]
        return out


def round_sig(x: float, digits: int = 3) -> float:
    return float(f"{x:.{digits}g}")


def _open_rows(path):
    try:
        fh = open(path, newline="", encoding="utf-8-sig")
    except OSError as exc:
        raise DataIOError(f"cannot read {path}: {exc.strerror or exc}") from None
    return fh


def ingest_csv(path, cmap: ColumnMap, cycle_index: int = 0, dt: float | None = None):
    """Read one cycle from a headered CSV export.

    Rows with unparseable or non-finite cells, and rows whose timestamp does
    not advance past the previous kept row, are dropped and counted. Time is
    shifted to start at zero. If ``dt`` is not given, the nominal interval
    is the median observed step rounded to three significant digits; the
    cycle is resampled onto that grid when any step deviates by more than
    the model's grid tolerance.

    Returns
    -------
    (CycleData, IngestReport)
    """
    report = IngestReport()
    wanted = {
        "time_col": cmap.time_col,
        "current_col": cmap.current_col,
        "voltage_col": cmap.voltage_col,
        "temp_col": cmap.temp_col,
    }
    if cmap.ambient_col is not None:
        wanted["ambient_col"] = cmap.ambient_col

    rows = []
    bad_lines, backwards = [], []
    with _open_rows(path) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptyCycleError(f"{path}: empty file, no header")
        header = [h.strip() for h in header]
        index = {}
        for key, col in wanted.items():
            if col not in header:
                raise SchemaError(f"{path}: column {col!r} ({key}) not found in header")
            index[key] = header.index(col)
        order = list(wanted)
        last_t = -math.inf
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            report.rows_read += 1
            try:
                vals = [float(row[index[k]]) for k in order]
            except (ValueError, IndexError):
                vals = None
            if vals is None or not all(math.isfinite(x) for x in vals):
                report.rows_dropped += 1
                bad_lines.append(reader.line_num)
                continue
            if vals[0] <= last_t:
                report.rows_dropped += 1
                backwards.append(reader.line_num)
                continue
            last_t = vals[0]
            rows.append(vals)

    if bad_lines:
        report.warnings.append(_describe(bad_lines, "unparseable row"))
    if backwards:
        report.warnings.append(_describe(backwards, "non-monotone timestamp"))
    for w in report.warnings:
        log.warning("%s: %s", path, w)
    if len(rows) < 2:
        raise EmptyCycleError(f"{path}: {len(rows)} usable rows, a cycle needs at least 2")

    data = np.array(rows)
    t = data[:, 0]
    if cmap.time_unit == "ms":
        t = t / 1000.0
    else:
        t = t * _TIME_SCALE[cmap.time_unit]
    t = t - t[0]
    i = data[:, 1] if cmap.current_sign == "as_is" else -data[:, 1]
    v = data[:, 2]
    ts = data[:, 3]
    if cmap.ambient_col is not None:
        ta = data[:, 4]
    else:
        ta = np.full(len(t), float(cmap.ambient_const))
    if cmap.temp_unit == "K":
        ts = ts - 273.15
        if cmap.ambient_col is not None:
            ta = ta - 273.15

    steps = np.diff(t)
    nominal = float(dt) if dt is not None else round_sig(float(np.median(steps)))
    if not nominal > 0:
        raise InvalidIntervalError(f"{path}: nominal sampling interval {nominal} is not positive")
    report.dt_nominal = nominal
    report.dt_jitter_max = float(np.max(np.abs(steps - nominal)) / nominal)

    cycle = CycleData(
        t=t, i=i, v=v, ts=ts, ta=ta, dt=nominal, q0=cmap.q0_ah, soc0=cmap.soc0,
        cycle_index=cycle_index, meta={"source": str(path)},
    )
    if report.dt_jitter_max > GRID_RTOL:
        cycle = resample_uniform(cycle, nominal)
        report.resampled = True
        report.warnings.append(
            f"resampled to dt={nominal!r} s (max step jitter {report.dt_jitter_max:.1%})"
        )
    report.clamp_events = soc_profile(cycle).clamp_events
    return cycle, report


def _describe(lines, what):
    shown = ", ".join(str(n) for n in lines[:_MAX_LISTED])
    more = f" and {len(lines) - _MAX_LISTED} more" if len(lines) > _MAX_LISTED else ""
    return f"dropped {len(lines)} {what}(s) at line {shown}{more}"


def resample_uniform(cycle: CycleData, dt: float) -> CycleData:
    """Linearly interpolate every channel onto ``t0, t0 + dt, ...`` within the span."""
    if not dt > 0:
        raise InvalidIntervalError(f"dt must be positive, got {dt}")
    t0 = cycle.t[0]
    span = cycle.t[-1] - t0
    if dt > span / 2:
        raise InvalidIntervalError(
            f"dt={dt:g} s exceeds half the cycle span ({span:g} s)"
        )
    n = int(math.floor(span / dt * (1 + 1e-12))) + 1
    grid = t0 + np.arange(n) * dt
    # no extrapolation past the last original sample
    grid = grid[grid <= cycle.t[-1] * (1 + 1e-12)]
    cols = {name: np.interp(grid, cycle.t, getattr(cycle, name)) for name in ("i", "v", "ts", "ta")}
    return cycle.replace(t=grid, dt=float(dt), **cols)


def capacity_fade(q_cycle: float, q_nominal: float) -> float:
    """Percent of nominal capacity lost."""
    if not q_nominal > 0:
        raise SchemaError(f"nominal capacity must be positive, got {q_nominal}")
    return 100.0 * (1.0 - q_cycle / q_nominal)


def is_canonical(path) -> bool:
    with _open_rows(path) as fh:
        header = next(csv.reader(fh), None)
    return header is not None and tuple(header) == CANONICAL_HEADER


def read_cycle_csv(path, q0_ah: float, soc0: float = 0.0, cycle_index: int = 0, dt: float | None = None):
    """Read a canonical cycle file; the header must match exactly."""
    if not is_canonical(path):
        raise SchemaError(f"{path}: header is not the canonical {','.join(CANONICAL_HEADER)}")
    cycle, _ = ingest_csv(path, ColumnMap.canonical(q0_ah, soc0), cycle_index, dt)
    return cycle


def load_cycle(path, cmap: ColumnMap, cycle_index: int = 0, dt: float | None = None):
    """Read canonical files directly and map anything else through ``cmap``."""
    if is_canonical(path):
        cmap = ColumnMap.canonical(cmap.q0_ah, cmap.soc0)
    return ingest_csv(path, cmap, cycle_index, dt)


def write_cycle_csv(cycle: CycleData, path) -> Path:
    path = Path(path)
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CANONICAL_HEADER)
            for row in zip(cycle.t, cycle.i, cycle.v, cycle.ts, cycle.ta):
                w.writerow([repr(float(x)) for x in row])
    except OSError as exc:
        raise DataIOError(f"cannot write {path}: {exc.strerror or exc}") from None
    return path


_TRAILING_INT = re.compile(r"(\d+)(?!.*\d)")


def cycle_index_from_name(path, default: int = 0) -> int:
    m = _TRAILING_INT.search(Path(path).stem)
    return int(m.group(1)) if m else default


def discover_cycles(directory) -> dict:
    """Map cycle index to CSV path using the last integer in each file name."""
    directory = Path(directory)
    if not directory.is_dir():
        raise DataIOError(f"dataset directory {directory} does not exist")
    found = {}
    for p in sorted(directory.glob("*.csv")):
        if _TRAILING_INT.search(p.stem) is None:
            continue
        idx = cycle_index_from_name(p)
        if idx in found:
            raise SchemaError(f"cycle {idx} matches both {found[idx].name} and {p.name}")
        found[idx] = p
    return found
