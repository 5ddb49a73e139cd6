import json

import numpy as np
import pytest

from tsvis.grid import (CaseError, NetworkError, build_admittance, bundled_case_path, case_from_dict,
                        compute_gsf, dc_flows, kron_reduce, load_case)

from conftest import case_doc, line, make_case, sg


def test_bundled_case39_shape(case39):
    assert case39.n_bus == 39
    assert len(case39.lines) == 46
    assert len(case39.sgs) == 10


def test_bundled_smib_shape(smib):
    assert (smib.n_bus, len(smib.lines), len(smib.sgs)) == (2, 1, 1)


def test_all_bundled_cases_load():
    for name in ("case_smib", "case9ish", "case39"):
        assert load_case(bundled_case_path(name)).name == name


def test_zero_reactance_names_the_line():
    doc = case_doc([1, 2, 3], [line(1, 1, 2), line(7, 2, 3, x=0.0)], [sg(1)], {3: 1.0})
    with pytest.raises(CaseError, match="7"):
        case_from_dict(doc)


def test_undeclared_bus_rejected():
    doc = case_doc([1, 2], [line(1, 1, 5)], [sg(1)], {2: 1.0})
    with pytest.raises(CaseError):
        case_from_dict(doc)


def test_parse_error_reports_position(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{"system": {,}')
    with pytest.raises(CaseError, match="line 1"):
        load_case(p)


def test_schema_error_reports_field():
    doc = case_doc([1, 2], [line(1, 1, 2)], [sg(1)], {2: 1.0})
    del doc["sgs"][0]["H"]
    with pytest.raises(CaseError, match="sgs/0"):
        case_from_dict(doc)


def test_requirement_above_device_maxima_rejected():
    doc = case_doc([1, 2], [line(1, 1, 2)], [sg(1)], {2: 1.0},
                   req={"imbalance_up": 0, "imbalance_down": 0, "inertia": 5.0, "damping": 0})
    with pytest.raises(CaseError, match="inertia"):
        case_from_dict(doc)


def test_admittance_lossless_zero_row_sums(case39):
    Y = build_admittance(case39)
    assert np.allclose(Y, Y.T, atol=0)
    assert np.abs(Y.sum(axis=1)).max() < 1e-9


def test_fault_at_sending_end_dominated_by_shunt(smib):
    status = np.array([0])
    Y = build_admittance(smib, status, fault=(1, 0.0))
    i = smib.bus_index[1]
    assert Y[i, i].real == pytest.approx(smib.fault_conductance)
    assert abs(Y[i, i]) > 1e4 * abs(Y[i, 1 - i])


def test_fault_errors(smib):
    with pytest.raises(NetworkError):
        build_admittance(smib, np.array([0]), fault=(99, 0.5))
    with pytest.raises(NetworkError):
        build_admittance(smib, np.array([0]), fault=(1, 1.5))
    with pytest.raises(NetworkError):
        build_admittance(smib, np.array([1]), fault=(1, 0.5))


def test_midline_fault_matches_hand_elimination():
    c = make_case([1, 2], [line(1, 1, 2, x=0.4)], [sg(1)], {2: 1.0})
    x = 0.25
    Y = build_admittance(c, np.array([0]), fault=(1, x))
    # star of y1 = 1/(j x X), y2 = 1/(j (1-x) X) and g at the middle node
    y1, y2, g = 1 / (1j * x * 0.4), 1 / (1j * (1 - x) * 0.4), c.fault_conductance
    s = y1 + y2 + g
    expect = np.array([[y1 - y1 * y1 / s, -y1 * y2 / s], [-y1 * y2 / s, y2 - y2 * y2 / s]])
    assert np.allclose(Y, expect, rtol=1e-12, atol=1e-12)


def test_removed_line_equals_shortened_list():
    lines = [line(1, 1, 2, x=0.1), line(2, 2, 3, x=0.2), line(3, 1, 3, x=0.3)]
    tri = make_case([1, 2, 3], lines, [sg(1)], {3: 1.0})
    chain = make_case([1, 2, 3], lines[:2], [sg(1)], {3: 1.0})
    Y_removed = build_admittance(tri, np.array([1, 1, 0]))
    assert np.abs(Y_removed - build_admittance(chain)).max() < 1e-12


def test_kron_retain_all_is_identity(case39):
    Y = build_admittance(case39)
    assert np.array_equal(kron_reduce(Y, np.arange(39)), Y)


def test_kron_series_chain():
    xa, xb = 0.3, 0.7
    ya, yb = 1 / (1j * xa), 1 / (1j * xb)
    Y = np.array([[ya, -ya, 0], [-ya, ya + yb, -yb], [0, -yb, yb]])
    R = kron_reduce(Y, [0, 2])
    y = 1 / (1j * (xa + xb))
    assert np.allclose(R, [[y, -y], [-y, y]], rtol=1e-12)


def test_kron_smib_transfer_admittance(smib):
    xd = smib.sgs[0].transient_reactance
    Ybus = build_admittance(smib)
    # internal node 0 behind xd at bus 1; buses follow
    Y = np.zeros((3, 3), dtype=complex)
    Y[1:, 1:] = Ybus
    yd = 1 / (1j * xd)
    Y[0, 0] += yd
    Y[1, 1] += yd
    Y[0, 1] -= yd
    Y[1, 0] -= yd
    R = kron_reduce(Y, [0, 2])
    x_line = smib.lines[0].reactance
    assert -R[0, 1] == pytest.approx(1 / (1j * (xd + x_line)), rel=1e-12)


def test_kron_singular_interior():
    Y = np.zeros((3, 3), dtype=complex)
    Y[0, 0] = 1.0
    with pytest.raises(NetworkError):
        kron_reduce(Y, [0])


def test_gsf_two_bus():
    c = make_case([1, 2], [line(1, 1, 2)], [sg(1)], {2: 1.0}, slack_bus=2)
    G = compute_gsf(c)
    assert G[0, 0] == pytest.approx(1.0)
    assert G[0, 1] == 0.0


def test_gsf_triangle_hand_solution():
    lines = [line(1, 1, 2, x=0.1), line(2, 2, 3, x=0.1), line(3, 1, 3, x=0.1)]
    c = make_case([1, 2, 3], lines, [sg(1)], {3: 1.0}, slack_bus=3)
    G = compute_gsf(c)
    assert G[2, 0] == pytest.approx(2 / 3, abs=1e-12)  # direct line 1-3
    assert G[0, 0] == pytest.approx(1 / 3, abs=1e-12)  # 1-2
    assert G[1, 0] == pytest.approx(1 / 3, abs=1e-12)  # 2-3
    assert np.all(G[:, 2] == 0.0)


def test_gsf_default_slack_is_largest_sg(case39):
    ref = case39.reference_bus()
    assert np.all(compute_gsf(case39)[:, case39.bus_index[ref]] == 0.0)


def test_gsf_reproduces_dc_flow(case39, rng):
    G = compute_gsf(case39)
    p = rng.normal(size=39)
    p[case39.bus_index[case39.reference_bus()]] -= p.sum()
    assert np.abs(G @ p - dc_flows(case39, p)).max() < 1e-9


def test_gsf_disconnected():
    c = make_case([1, 2, 3], [line(1, 1, 2), line(2, 2, 3)], [sg(1)], {3: 1.0})
    with pytest.raises(NetworkError):
        compute_gsf(c, np.array([1, 0]))


def test_schema_copy_in_docs_matches_package():
    from importlib import resources
    from pathlib import Path

    shipped = json.loads(resources.files("tsvis").joinpath("case-schema.json").read_text())
    docs = Path(__file__).resolve().parents[1] / "docs" / "case-schema.json"
    assert json.loads(docs.read_text()) == shipped
