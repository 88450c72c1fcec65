"""Shared fixtures and the suite-wide energy-dissipation audit.

Every trajectory produced through ``mbo.scheme.run`` during the session is
checked against the per-step energy-dissipation inequality; the outcome is
reported at the end of the run and fails the session on a violation.
"""
import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

import mbo.harness.experiments as _experiments
import mbo.scheme as _scheme
from mbo.energetics import energy_dissipation_check

settings.register_profile(
    "mbo", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow], derandomize=True
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "mbo"))

AUDIT = {"runs": 0, "steps": 0, "violations": []}
ACCEPTANCE = []

_original_run = _scheme.run


def _audited_run(chi0, cfg, observers=()):
    traj = _original_run(chi0, cfg, observers)
    rep = energy_dissipation_check(traj)
    AUDIT["runs"] += 1
    AUDIT["steps"] += len(traj.records)
    if not rep.ok:
        AUDIT["violations"].append((cfg.grid, cfg.h, rep.violations[:3]))
    return traj


_scheme.run = _audited_run
_experiments.run = _audited_run


def record_criterion(number, title, passed, detail):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {title} | {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
    terminalreporter.section("energy-dissipation audit")
    terminalreporter.write_line(
        f"{AUDIT['runs']} runs, {AUDIT['steps']} steps, {len(AUDIT['violations'])} violating runs")
    for v in AUDIT["violations"]:
        terminalreporter.write_line(f"  violation: {v}")


def pytest_sessionfinish(session, exitstatus):
    if AUDIT["violations"] and exitstatus == 0:
        session.exitstatus = 1


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
