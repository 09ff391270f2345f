import numpy as np
import pytest

from ectm.evaluation import REFERENCE_CELL, SynthSpec, synth_generate
from ectm.model import CycleData, params_to_linear

DT = 5.0


@pytest.fixture(scope="session")
def theta_ref():
    return params_to_linear(REFERENCE_CELL, DT)


@pytest.fixture(scope="session")
def rich_cycle(theta_ref):
    """Noiseless random-steps cycle generated by the reference cell."""
    return synth_generate(SynthSpec(theta_ref, "random_steps", 0.0, 5000, seed=11, dt=DT))


def make_cycle(n=20, dt=1.0, i=0.0, v=3.7, ts=25.0, ta=25.0, q0=1.0, soc0=0.5, **kw):
    t = np.arange(n) * dt
    full = lambda x: np.broadcast_to(np.asarray(x, dtype=float), (n,))
    return CycleData(t=t, i=full(i), v=full(v), ts=full(ts), ta=full(ta), dt=dt, q0=q0, soc0=soc0, **kw)


# -- acceptance summary: one line per criterion -------------------------------

_criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None:
        return
    if rep.when == "call" or rep.skipped or rep.failed:
        status = "PASS" if rep.passed else "SKIP" if rep.skipped else "FAIL"
        _criteria.setdefault(mark.args, []).append(status)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for (number, title), statuses in sorted(_criteria.items()):
        if "FAIL" in statuses:
            verdict = "FAIL"
        elif all(s == "SKIP" for s in statuses):
            verdict = "SKIP"
        else:
            verdict = "PASS"
        terminalreporter.write_line(f"[{verdict}] criterion {number}: {title}")
