import copy

import numpy as np
import pytest

from tsvis.dispatch import solve_vis
from tsvis.grid import case_from_dict, load_case


def sg(bus, **kw):
    d = dict(bus=bus, name=f"SG{bus}", H=3.0, damping=1.0, xd_prime=0.3, p_min=0.0, p_max=10.0,
             ramp_up=10.0, ramp_down=10.0, c0=0.0, c1=0.0, c2=1.0, reserve_up_price=1.0,
             reserve_down_price=1.0, prev_output=1.0)
    d.update(kw)
    return d


def ibr(bus, **kw):
    d = dict(bus=bus, name=f"IBR{bus}", p_max=5.0, inertia_max=10.0, damping_max=10.0, c3=0.0, c4=0.0,
             c5=1.0, inertia_price=0.1, damping_price=0.1)
    d.update(kw)
    return d


def line(i, f, t, x=0.2, **kw):
    d = {"id": i, "from": f, "to": t, "x": x, "flow_min": -50.0, "flow_max": 50.0, "fault_rate": 1.0,
         "in_service": 1}
    d.update(kw)
    return d


def case_doc(buses, lines, sgs, loads, ibrs=(), evs=(), req=None, **system):
    sysd = {"name": "test", "base_power": 100.0, "nominal_freq": 60.0}
    sysd.update(system)
    return {
        "system": sysd, "buses": list(buses), "lines": list(lines), "sgs": list(sgs), "ibrs": list(ibrs),
        "evs": list(evs), "loads": [{"bus": b, "p": p, "q": 0.0} for b, p in loads.items()],
        "requirements": req or {"imbalance_up": 0.0, "imbalance_down": 0.0, "inertia": 0.0, "damping": 0.0},
    }


def make_case(*args, **kw):
    return case_from_dict(case_doc(*args, **kw))


def smib_params():
    """Parameters of the bundled SMIB case (E' and delta0 derived in tests)."""
    return dict(H=3.5, xd=0.3, x_line=0.5, pm=0.9, f=60.0)


@pytest.fixture(scope="session")
def case39():
    return load_case("case39")


@pytest.fixture(scope="session")
def case9():
    return load_case("case9ish")


@pytest.fixture(scope="session")
def smib():
    return load_case("case_smib")


@pytest.fixture(scope="session")
def disp39(case39):
    return solve_vis(case39)


@pytest.fixture(scope="session")
def disp9(case9):
    return solve_vis(case9)


@pytest.fixture(scope="session")
def disp_smib(smib):
    return solve_vis(smib)


@pytest.fixture
def deepcopy():
    return copy.deepcopy


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def study_run():
    """One full run of the bundled case39 study: (report, traj_a, traj_b, risk, robust)."""
    from tsvis.casestudy import StudyConfig, run_case_study

    return run_case_study(StudyConfig.load())


# acceptance criterion number -> (status, title, seconds, detail); filled by test_acceptance.py
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        status, title, secs, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"[{status}] {n:2d}. {title} ({secs:.1f} s) -- {detail}")
