import numpy as np
import pytest

from conftest import make_cycle
from ectm.datasets import (
    CANONICAL_HEADER,
    ColumnMap,
    capacity_fade,
    cycle_index_from_name,
    discover_cycles,
    ingest_csv,
    load_column_map,
    load_cycle,
    read_cycle_csv,
    resample_uniform,
    round_sig,
    write_cycle_csv,
)
from ectm.errors import DataIOError, EmptyCycleError, InvalidIntervalError, SchemaError

RAW_HEADER = "Time,Current_measured,Voltage_measured,Temperature_measured"


def raw_csv(path, rows, header=RAW_HEADER):
    lines = [header] + [",".join(str(x) for x in r) for r in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def nasa_map(**kw):
    base = dict(
        time_col="Time", current_col="Current_measured", voltage_col="Voltage_measured",
        temp_col="Temperature_measured", ambient_const=24.0, q0_ah=2.0,
    )
    base.update(kw)
    return ColumnMap(**base)


def plain_rows(n=10, dt=1.0):
    return [(k * dt, 1.5, 3.9 + 0.01 * k, 25 + 0.1 * k) for k in range(n)]


# -- column map --------------------------------------------------------------


def test_column_map_needs_one_ambient_source():
    with pytest.raises(SchemaError):
        nasa_map(ambient_const=None)
    with pytest.raises(SchemaError):
        nasa_map(ambient_col="Tamb")


@pytest.mark.parametrize(
    "kw", [{"q0_ah": 0.0}, {"soc0": 1.5}, {"time_unit": "min"}, {"temp_unit": "F"}, {"current_sign": "neg"}]
)
def test_column_map_rejects_bad_fields(kw):
    with pytest.raises(SchemaError):
        nasa_map(**kw)


def test_column_map_file(tmp_path):
    text = nasa_map(soc0=0.1, time_unit="ms").to_text()
    (tmp_path / "nb.map").write_text("# NASA export\n" + text, encoding="utf-8")
    cmap = load_column_map(tmp_path / "nb.map")
    assert cmap == nasa_map(soc0=0.1, time_unit="ms")


def test_column_map_unknown_key():
    with pytest.raises(SchemaError, match="colour"):
        ColumnMap.from_mapping({"colour": "red"})


def test_column_map_missing_key():
    with pytest.raises(SchemaError, match="q0_ah"):
        ColumnMap.from_mapping({"time_col": "t", "current_col": "i", "voltage_col": "v", "temp_col": "T",
                                "ambient_const": "24"})


# -- ingest ------------------------------------------------------------------


def test_nb_mapping_constant_ambient(tmp_path):
    cycle, report = ingest_csv(raw_csv(tmp_path / "c.csv", plain_rows()), nasa_map(), cycle_index=18)
    assert np.all(cycle.ta == 24.0)
    assert cycle.q0 == 2.0
    assert cycle.cycle_index == 18
    assert report.rows_read == 10 and report.rows_dropped == 0
    assert report.dt_nominal == 1.0
    assert not report.resampled


def test_ob_mapping_constant_ambient(tmp_path):
    cmap = nasa_map(ambient_const=40.0, q0_ah=0.74)
    cycle, _ = ingest_csv(raw_csv(tmp_path / "c.csv", plain_rows()), cmap)
    assert np.all(cycle.ta == 40.0)
    assert cycle.q0 == 0.74


def test_kelvin_to_celsius(tmp_path):
    rows = [(k, 1.0, 3.8, 298.15) for k in range(5)]
    cycle, _ = ingest_csv(raw_csv(tmp_path / "k.csv", rows), nasa_map(temp_unit="K"))
    np.testing.assert_allclose(cycle.ts, 25.0, rtol=0, atol=1e-12)
    # a constant ambient is already in Celsius
    assert np.all(cycle.ta == 24.0)


def test_kelvin_ambient_column(tmp_path):
    rows = [(k, 1.0, 3.8, 300.15, 293.15) for k in range(5)]
    path = raw_csv(tmp_path / "k.csv", rows, RAW_HEADER + ",Tamb")
    cycle, _ = ingest_csv(path, nasa_map(temp_unit="K", ambient_const=None, ambient_col="Tamb"))
    np.testing.assert_allclose(cycle.ta, 20.0, atol=1e-12)
    np.testing.assert_allclose(cycle.ts, 27.0, atol=1e-12)


def test_milliseconds_to_seconds(tmp_path):
    rows = [(1000 * k, 1.0, 3.8, 25.0) for k in range(6)]
    cycle, report = ingest_csv(raw_csv(tmp_path / "ms.csv", rows), nasa_map(time_unit="ms"))
    np.testing.assert_array_equal(cycle.t, np.arange(6.0))
    assert cycle.dt == 1.0 and report.dt_nominal == 1.0


def test_hours_and_offset(tmp_path):
    rows = [(2.0 + k / 3600, 1.0, 3.8, 25.0) for k in range(6)]
    cycle, _ = ingest_csv(raw_csv(tmp_path / "h.csv", rows), nasa_map(time_unit="h"))
    assert cycle.t[0] == 0.0
    np.testing.assert_allclose(cycle.t, np.arange(6.0), atol=1e-8)


def test_current_sign_flipped(tmp_path):
    cycle, _ = ingest_csv(raw_csv(tmp_path / "c.csv", plain_rows()), nasa_map(current_sign="flipped"))
    assert np.all(cycle.i == -1.5)


def test_missing_column_named(tmp_path):
    path = raw_csv(tmp_path / "c.csv", [r[:3] for r in plain_rows()], "Time,Current_measured,Temperature_measured")
    with pytest.raises(SchemaError, match="voltage_col"):
        ingest_csv(path, nasa_map())


def test_unparseable_rows_dropped(tmp_path):
    rows = plain_rows(12)
    rows[3] = (3.0, "n/a", 3.9, 25.0)
    rows[7] = (7.0, 1.5, "", 25.0)
    cycle, report = ingest_csv(raw_csv(tmp_path / "c.csv", rows), nasa_map())
    assert report.rows_read == 12
    assert report.rows_dropped == 2
    assert len(report.warnings) >= 1
    # header is line 1, so rows 3 and 7 sit on lines 5 and 9
    assert "line 5, 9" in report.warnings[0]
    # the gaps make the grid non-uniform, so the cycle is resampled back onto dt=1
    assert report.resampled
    np.testing.assert_array_equal(cycle.t, np.arange(12.0))


def test_non_monotone_rows_dropped(tmp_path):
    rows = plain_rows(8)
    rows.insert(4, (2.0, 1.5, 3.9, 25.0))
    rows.insert(6, rows[5])
    cycle, report = ingest_csv(raw_csv(tmp_path / "c.csv", rows), nasa_map())
    assert report.rows_dropped == 2
    assert any("non-monotone" in w for w in report.warnings)
    np.testing.assert_array_equal(cycle.t, np.arange(8.0))
    assert report.rows_read >= report.rows_dropped


def test_empty_file(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("", encoding="utf-8")
    with pytest.raises(EmptyCycleError):
        ingest_csv(path, nasa_map())


def test_header_only(tmp_path):
    with pytest.raises(EmptyCycleError):
        ingest_csv(raw_csv(tmp_path / "h.csv", []), nasa_map())


def test_missing_file(tmp_path):
    with pytest.raises(DataIOError):
        ingest_csv(tmp_path / "nope.csv", nasa_map())


def test_default_dt_is_rounded_median(tmp_path):
    rows = [(k * 2.0004, 1.0, 3.8, 25.0) for k in range(9)]
    cycle, report = ingest_csv(raw_csv(tmp_path / "c.csv", rows), nasa_map())
    assert report.dt_nominal == 2.0
    assert cycle.dt == 2.0
    assert round_sig(0.012345) == 0.0123


def test_explicit_dt_resamples(tmp_path):
    cycle, report = ingest_csv(raw_csv(tmp_path / "c.csv", plain_rows(11)), nasa_map(), dt=2.0)
    assert report.resampled
    np.testing.assert_array_equal(cycle.t, np.arange(0.0, 11.0, 2.0))


def test_clamp_events_reported(tmp_path):
    # 2 A for 10 s into a 1 mAh cell overflows
    rows = [(k, 2.0, 4.0, 25.0) for k in range(10)]
    _, report = ingest_csv(raw_csv(tmp_path / "c.csv", rows), nasa_map(q0_ah=0.001, soc0=0.9))
    assert report.clamp_events > 0


# -- resampling --------------------------------------------------------------


def test_resample_uniform_is_noop():
    c = make_cycle(n=50, dt=0.5, i=np.sin(np.arange(50.0)), ts=25 + np.cos(np.arange(50.0)))
    out = resample_uniform(c, 0.5)
    for name in ("t", "i", "v", "ts", "ta"):
        np.testing.assert_allclose(getattr(out, name), getattr(c, name), rtol=0, atol=1e-12)
    again = resample_uniform(out, 0.5)
    assert again.equals(out, atol=1e-12)


def test_resample_linear_midpoint():
    from ectm.model import CycleData

    t = np.array([0.0, 1.0, 3.0])
    lin = lambda x: 2.0 + 0.5 * x
    c = CycleData(t=t, i=lin(t), v=lin(t) + 1, ts=lin(t) + 20, ta=lin(t) + 10, dt=1.0, q0=1.0)
    out = resample_uniform(c, 1.0)
    np.testing.assert_array_equal(out.t, [0.0, 1.0, 2.0, 3.0])
    assert out.i[2] == pytest.approx(0.5 * (c.i[1] + c.i[2]), abs=1e-15)
    assert out.ts[2] == pytest.approx(lin(2.0) + 20, abs=1e-14)


def test_resample_jittered_sinusoid_bound():
    from ectm.model import CycleData

    rng = np.random.default_rng(3)
    k = np.arange(200.0)
    t = k + rng.uniform(-0.2, 0.2, k.size)
    t[0] = 0.0
    w = 0.3
    f = lambda x: np.sin(w * x)
    c = CycleData(t=t, i=f(t), v=3.7 + 0 * t, ts=25 + f(t), ta=25 + 0 * t, dt=1.0, q0=1.0)
    out = resample_uniform(c, 1.0)
    bound = w**2 * np.max(np.diff(t)) ** 2 / 8
    err = np.max(np.abs(out.i - f(out.t)))
    assert err <= bound
    assert out.t[-1] <= t[-1]
    assert np.all(np.diff(out.t) == 1.0)


def test_resample_interval_too_large():
    with pytest.raises(InvalidIntervalError):
        resample_uniform(make_cycle(n=5), 3.0)
    with pytest.raises(InvalidIntervalError):
        resample_uniform(make_cycle(n=5), 0.0)


# -- canonical files ---------------------------------------------------------


def test_canonical_round_trip(tmp_path, rich_cycle):
    first = write_cycle_csv(rich_cycle, tmp_path / "a.csv")
    assert first.read_text().splitlines()[0] == ",".join(CANONICAL_HEADER)
    back = read_cycle_csv(first, rich_cycle.q0, rich_cycle.soc0, rich_cycle.cycle_index)
    for name in ("t", "i", "v", "ts", "ta"):
        np.testing.assert_array_equal(getattr(back, name), getattr(rich_cycle, name))
    second = write_cycle_csv(back, tmp_path / "b.csv")
    assert first.read_bytes() == second.read_bytes()


def test_read_cycle_csv_requires_canonical(tmp_path):
    with pytest.raises(SchemaError):
        read_cycle_csv(raw_csv(tmp_path / "c.csv", plain_rows()), 2.0)


def test_load_cycle_bypasses_map_for_canonical(tmp_path):
    c = make_cycle(n=12, i=1.0, ta=30.0)
    write_cycle_csv(c, tmp_path / "c.csv")
    cycle, _ = load_cycle(tmp_path / "c.csv", nasa_map(q0_ah=3.0, soc0=0.2))
    np.testing.assert_array_equal(cycle.ta, c.ta)
    assert cycle.q0 == 3.0 and cycle.soc0 == 0.2


# -- misc --------------------------------------------------------------------


def test_capacity_fade():
    assert capacity_fade(2.0, 2.0) == 0.0
    assert capacity_fade(0.7584 * 2.0, 2.0) == pytest.approx(24.16, abs=1e-9)
    assert capacity_fade(0.74 * (1 - 0.2740), 0.74) == pytest.approx(27.40, abs=1e-9)
    with pytest.raises(SchemaError):
        capacity_fade(1.0, 0.0)


def test_discover_cycles(tmp_path):
    for name in ("B0018_cycle_15.csv", "B0018_cycle_40.csv", "cycle128.csv", "notes.csv"):
        (tmp_path / name).write_text(",".join(CANONICAL_HEADER) + "\n")
    found = discover_cycles(tmp_path)
    assert sorted(found) == [15, 40, 128]
    assert found[40].name == "B0018_cycle_40.csv"
    assert cycle_index_from_name("x_7_b.csv") == 7


def test_discover_cycles_duplicates(tmp_path):
    (tmp_path / "a_3.csv").write_text("")
    (tmp_path / "b_3.csv").write_text("")
    with pytest.raises(SchemaError):
        discover_cycles(tmp_path)
    with pytest.raises(DataIOError):
        discover_cycles(tmp_path / "missing")
