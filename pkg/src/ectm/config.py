"""Pipeline run configuration, read from a flat ``key = value`` file.

Recognised keys::

    dataset      = nb18/            # directory of per-cycle CSVs, index = last integer in the name
    column_map   = nb18.map         # ColumnMap file (q0_ah and soc0 are needed even for canonical files)
    base_cycle   = 15
    eval_cycles  = 40, 128
    degree       = 5
    mode         = free_running     # or teacher_forced
    output_dir   = out/nb18
    resample_dt  = 2.5              # optional
    box_lower    = -inf, -inf, ...  # optional, both bounds or neither
    box_upper    = inf, inf, ...
    tol          = 1e-8             # optional, active-set KKT tolerance
    max_iter     = 200              # optional

Relative paths are taken relative to the configuration file.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .datasets import read_kv
from .errors import SchemaError
from .identify import DEFAULT_DEGREE, BoxConstraints
from .model import Mode

_KEYS = {
    "dataset", "column_map", "base_cycle", "eval_cycles", "degree", "mode",
    "output_dir", "resample_dt", "box_lower", "box_upper", "tol", "max_iter",
}


def parse_floats(text: str) -> list:
    try:
        return [float(x) for x in text.replace(";", ",").split(",") if x.strip()]
    except ValueError as exc:
        raise SchemaError(f"bad number list {text!r}: {exc}") from None


def parse_ints(text: str) -> list:
    try:
        return [int(x) for x in text.replace(";", ",").split(",") if x.strip()]
    except ValueError as exc:
        raise SchemaError(f"bad integer list {text!r}: {exc}") from None


def make_box(lower, upper, m: int) -> BoxConstraints | None:
    if lower is None and upper is None:
        return None
    if lower is None or upper is None:
        raise SchemaError("box_lower and box_upper must be given together")
    lower, upper = parse_floats(lower), parse_floats(upper)
    if len(lower) != m or len(upper) != m:
        raise SchemaError(f"box bounds need {m} entries each, got {len(lower)} and {len(upper)}")
    return BoxConstraints(lower, upper)


@dataclass(frozen=True)
class RunConfig:
    dataset: Path
    column_map: Path
    base_cycle: int
    eval_cycles: tuple
    output_dir: Path
    degree: int = DEFAULT_DEGREE
    mode: Mode = Mode.FREE_RUNNING
    box: BoxConstraints | None = None
    resample_dt: float | None = None
    tol: float = 1e-8
    max_iter: int | None = None

    def __post_init__(self):
        if self.degree < 0:
            raise SchemaError("degree must be non-negative")
        if self.base_cycle in self.eval_cycles:
            raise SchemaError(f"base cycle {self.base_cycle} is also listed for evaluation")
        if len(set(self.eval_cycles)) != len(self.eval_cycles):
            raise SchemaError("eval_cycles lists a cycle twice")
        if self.resample_dt is not None and not self.resample_dt > 0:
            raise SchemaError("resample_dt must be positive")

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        kv = read_kv(path)
        unknown = set(kv) - _KEYS
        if unknown:
            raise SchemaError(f"{path}: unknown keys {', '.join(sorted(unknown))}")
        missing = {"dataset", "column_map", "base_cycle", "eval_cycles", "output_dir"} - set(kv)
        if missing:
            raise SchemaError(f"{path}: missing keys {', '.join(sorted(missing))}")
        root = path.parent

        def resolve(p):
            p = Path(p).expanduser()
            return p if p.is_absolute() else root / p

        try:
            degree = int(kv.get("degree", DEFAULT_DEGREE))
            base = int(kv["base_cycle"])
            resample = float(kv["resample_dt"]) if kv.get("resample_dt") else None
            tol = float(kv.get("tol", 1e-8))
            max_iter = int(kv["max_iter"]) if kv.get("max_iter") else None
            mode = Mode(kv.get("mode", Mode.FREE_RUNNING.value))
        except ValueError as exc:
            raise SchemaError(f"{path}: {exc}") from None
        return cls(
            dataset=resolve(kv["dataset"]),
            column_map=resolve(kv["column_map"]),
            base_cycle=base,
            eval_cycles=tuple(parse_ints(kv["eval_cycles"])),
            output_dir=resolve(kv["output_dir"]),
            degree=degree,
            mode=mode,
            box=make_box(kv.get("box_lower"), kv.get("box_upper"), degree + 4),
            resample_dt=resample,
            tol=tol,
            max_iter=max_iter,
        )
