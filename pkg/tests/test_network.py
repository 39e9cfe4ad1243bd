"""Network model: incidence structure, flows, validation and the text case format."""
from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from freqguard.network import (CaseFormatError, NetworkError, PowerNetwork, aggregate_flow,
                               build_incidence, format_case, parse_case, range_residual, validate)

from helpers import HAND, path3, random_network, two_bus


def test_two_bus_incidence():
    assert build_incidence(two_bus()).tolist() == [[1.0, -1.0]]


def test_path_incidence_lower_index_positive():
    D = build_incidence(path3())
    assert D.tolist() == [[1, -1, 0], [0, 1, -1]]


def test_ring_rank_matches_oracle():
    ring = PowerNetwork.from_edges(3, [(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)])
    assert np.linalg.matrix_rank(build_incidence(ring)) == HAND["ring3_rank"]


def test_orientation_override():
    net = PowerNetwork.from_edges(2, [(0, 1, 1.0)], orientation=[1])
    assert build_incidence(net).tolist() == [[-1.0, 1.0]]
    with pytest.raises(NetworkError):
        PowerNetwork.from_edges(3, [(0, 1, 1.0)], orientation=[2])


def test_disconnected_incidence_names_component():
    net = PowerNetwork.from_edges(4, [(0, 1, 1.0), (2, 3, 1.0)])
    with pytest.raises(NetworkError, match=r"\[\[3, 4\]\]"):
        build_incidence(net)


def test_aggregate_flow_examples():
    net = two_bus()
    assert aggregate_flow(net, build_incidence(net), [1.0]).tolist() == HAND["flow_2bus"]
    net = path3()
    assert aggregate_flow(net, build_incidence(net), [1.0, 1.0]).tolist() == HAND["flow_path3"]
    assert not aggregate_flow(net, build_incidence(net), [0.0, 0.0]).any()


def test_aggregate_flow_dimension_mismatch():
    net = path3()
    with pytest.raises(ValueError):
        aggregate_flow(net, build_incidence(net), [1.0])


def test_validate_valid_network():
    assert validate(two_bus()) == []


def test_validate_reports_every_problem():
    net = PowerNetwork.from_edges(2, [(0, 1, 1.0)], inertia=[0.0, 1.0])
    assert any("inertia must be strictly positive" in p for p in validate(net))
    net = PowerNetwork.from_edges(4, [(0, 1, 1.0), (2, 3, 1.0)])
    assert any("graph not connected" in p for p in validate(net))
    net = PowerNetwork.from_edges(2, [(0, 1, 1.0), (1, 0, 2.0)], damping=-1.0)
    probs = validate(net)
    assert any("duplicate line" in p for p in probs)
    assert any("damping" in p for p in probs)
    net = PowerNetwork.from_edges(2, [(0, 1, 0.0)], controlled=[5])
    probs = validate(net)
    assert any("susceptance" in p for p in probs)
    assert any("controlled bus 6" in p for p in probs)


def test_validate_never_raises_on_bad_line_index():
    net = PowerNetwork.from_edges(2, [(0, 7, 1.0)])
    assert any("outside" in p for p in validate(net))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 12))
def test_laplacian_properties(seed, n):
    rng = np.random.default_rng(seed)
    net = random_network(rng, n)
    D = build_incidence(net)
    assert np.all(D.sum(axis=1) == 0)
    assert np.linalg.matrix_rank(D) == n - 1
    L = net.laplacian
    assert np.allclose(L, L.T)
    ev = np.linalg.eigvalsh(L)
    assert abs(ev[0]) < 1e-9 and ev[1] > 1e-9
    lam = rng.normal(size=net.n_lines)
    assert abs(aggregate_flow(net, D, lam).sum()) < 1e-9


def test_range_residual():
    D = build_incidence(path3())
    assert range_residual(D, D @ np.array([0.3, -1.0, 2.0])) < 1e-12
    ring = build_incidence(PowerNetwork.from_edges(3, [(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)]))
    assert range_residual(ring, np.array([1.0, 1.0, -1.0])) > 0.1


CASE = """\
# two buses
bus 1 1.0 2.0 controlled
bus 2 0.5 1.0   # trailing comment
line 2 1 3.5
injection 1 0.25
"""


def test_parse_case():
    net = parse_case(CASE)
    assert net.inertia.tolist() == [1.0, 0.5]
    assert net.damping.tolist() == [2.0, 1.0]
    assert net.controlled == (0,)
    assert (net.lines[0].pos, net.lines[0].neg, net.lines[0].susceptance) == (1, 0, 3.5)
    assert net.injections.tolist() == [0.25, 0.0]


def test_case_round_trip():
    rng = np.random.default_rng(3)
    net = random_network(rng, 7, controlled=[1, 4], inertia=(0.1, 0.9))
    back = parse_case(format_case(net, header="generated"))
    assert np.array_equal(back.inertia, net.inertia)
    assert np.array_equal(back.damping, net.damping)
    assert back.lines == net.lines
    assert back.controlled == net.controlled


@pytest.mark.parametrize("text, line", [
    ("bus 1 1 1\nbus 2 x 1\n", 2),
    ("bus 1 1 1\nbus 1 1 1\n", 2),
    ("bus 1 1 1\n\nwire 1 2 1\n", 3),
    ("bus 1 1 1 slack\n", 1),
    ("bus 0 1 1\n", 1),
    ("bus 1 1 1\nline 1 2\n", 2),
])
def test_case_errors_carry_line_numbers(text, line):
    with pytest.raises(CaseFormatError) as exc:
        parse_case(text, source="net.case")
    assert exc.value.lineno == line
    assert str(exc.value).startswith(f"net.case:{line}:")


def test_case_structural_errors():
    with pytest.raises(CaseFormatError, match="missing"):
        parse_case("bus 1 1 1\nbus 3 1 1\n")
    with pytest.raises(CaseFormatError, match="undefined bus"):
        parse_case("bus 1 1 1\nline 1 2 1\n")
    with pytest.raises(CaseFormatError, match="no bus"):
        parse_case("# empty\n")
