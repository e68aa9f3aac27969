import copy
import time
from pathlib import Path

import pytest

from ovsim.scenario import load_scenario, scenario_from_dict
from ovsim.sim import SimEngine

SCENARIO_DIR = Path(__file__).resolve().parent.parent / "scenarios"

BASE_SCENARIO = {
    "schema_version": 1,
    "name": "test",
    "duration": 8.0,
    "plant_dt": 0.05,
    "planner_period": 0.1,
    "seed": 0,
    "road": {"lane_count": 2, "lane_width": 3.5, "length": 1000.0, "x0": -100.0},
    "ego": {
        "state": {"x": 0.0, "y": 0.0, "psi": 0.0, "v": 0.0},
        "geometry": {"l_f": 1.4, "l_r": 1.4, "length": 4.5, "width": 1.8},
        "limits": {"a_min": -5.0, "a_max": 3.0, "delta_min": -0.6, "delta_max": 0.6},
        "steering_lag_tau": 0.0,
    },
    "traffic": [],
    "events": [],
    "behavior": {"v_des": 10.0, "auto_overtake": False, "follow_setback": 3.6,
                 "d_follow_trigger": 18.0},
    "risk": {},
    "nmpc": {},
}


def make_scenario(**overrides):
    raw = copy.deepcopy(BASE_SCENARIO)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(raw.get(key), dict):
            raw[key].update(value)
        else:
            raw[key] = value
    return scenario_from_dict(raw)


def lv_traffic(gap=35.0, speed=5.0, lane=0):
    return [{
        "id": "lv", "lane": lane, "direction": "forward",
        "start_station": 100.0 + gap,
        "geometry": {"l_f": 1.4, "l_r": 1.4, "length": 4.5, "width": 1.8},
        "speed_profile": [[0.0, speed]],
    }]


@pytest.fixture(scope="session")
def paper_scenario():
    return load_scenario(SCENARIO_DIR / "paper_overtake.yaml")


@pytest.fixture(scope="session")
def paper_run(paper_scenario):
    """The nominal scenario, run once and shared by every test that needs it."""
    start = time.perf_counter()
    engine = SimEngine(paper_scenario)
    logs, metrics = engine.run()
    wall = time.perf_counter() - start
    return logs, metrics, wall


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion."""
    lines = []
    for status in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(status, []):
            if "test_acceptance" in report.nodeid:
                name = report.nodeid.split("::")[-1]
                verdict = "PASS" if status == "passed" else "FAIL"
                lines.append((name, verdict))
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for name, verdict in sorted(lines):
            terminalreporter.write_line(f"{verdict}  {name}")
