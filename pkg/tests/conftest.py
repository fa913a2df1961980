import json
import math
import time

import numpy as np
import pytest

from sawkit.com_sim import SynthesisSpec, linewidth_grid, single_mode_comb, synthesize_s11
from sawkit.domain import DeviceGeometry

F0 = 5.5976e9
QI = 4.74e4
QC = 5.0e4


def reference_geometry(**changes) -> DeviceGeometry:
    """f = v/2p = 5.6 GHz, |r_s| = 0.013, N_g = 450."""
    base = dict(
        pitch_p=0.5e-6,
        electrode_width_a=0.25e-6,
        aperture_w=30e-6,
        cavity_length_L=1e-4,
        mirror_periods_Ng=450,
        saw_velocity_v=5600.0,
        reflectivity_rs=0.013,
    )
    base.update(changes)
    return DeviceGeometry(**base)


def single_trace(seed=0, *, f0=F0, qi=QI, qc=QC, noise=0.005, tau=40e-9, amplitude=0.9, phase=0.7, points=1001, span=5.0, **kw):
    ql = 1.0 / (1.0 / qi + 1.0 / qc)
    spec = SynthesisSpec(single_mode_comb(f0, qi, qc), linewidth_grid(f0, ql, span, points), noise, tau, amplitude, phase)
    return synthesize_s11(spec, seed, **kw)


def write_manifest(path, **fields) -> str:
    base = {
        "kind": "power_sweep",
        "geometry": reference_geometry().to_dict(),
        "grid": {"power_dbm": [-141.0]},
        "synthesis": {"f0": F0, "Q_i": QI, "Q_c": QC, "noise_sigma": 0.005, "cable_delay_tau": 40e-9},
        "seed": 1,
        "output_dir": "traces",
    }
    base.update(fields)
    path.write_text(json.dumps(base), encoding="utf-8")
    return str(path)


@pytest.fixture
def geometry():
    return reference_geometry()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def rel(a, b):
    return abs(a / b - 1.0) if b != 0 else abs(a)


def isclose_rel(a, b, tol):
    return math.isclose(a, b, rel_tol=tol, abs_tol=0.0)


# --- acceptance reporting -------------------------------------------------------
# tests marked ``criterion(k, "title")`` are tallied and one line per criterion is
# printed at the end of the run; criterion 10 also carries the suite time budget

SUITE_BUDGET_S = 120.0
_START = time.perf_counter()
_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(k, title): acceptance criterion a test belongs to")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not (rep.when == "call" or rep.outcome != "passed"):
        return
    k, title = mark.args
    entry = _CRITERIA.setdefault(k, {"title": title, "outcomes": []})
    entry["outcomes"].append(rep.outcome)


def _verdicts(elapsed):
    lines = []
    for k in sorted(_CRITERIA):
        entry = _CRITERIA[k]
        passed = all(o == "passed" for o in entry["outcomes"])
        note = f"{entry['outcomes'].count('passed')}/{len(entry['outcomes'])} tests"
        if k == 10:
            passed = passed and elapsed < SUITE_BUDGET_S
            note += f", run time {elapsed:.1f} s (budget {SUITE_BUDGET_S:.0f} s)"
        lines.append(f"criterion {k:2d} {'PASS' if passed else 'FAIL'}  {entry['title']} ({note})")
    return lines


def pytest_sessionfinish(session, exitstatus):
    elapsed = time.perf_counter() - _START
    if 10 in _CRITERIA and elapsed >= SUITE_BUDGET_S and exitstatus == 0:
        session.exitstatus = 1


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    lines = _verdicts(time.perf_counter() - _START)
    terminalreporter.section("acceptance criteria")
    for line in lines:
        terminalreporter.write_line(line)
