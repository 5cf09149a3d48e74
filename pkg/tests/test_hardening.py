import json
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from irisim.errors import DomainError, ParseError, ValidationError
from irisim.hardening import (
    ProcessNode,
    bypass_area,
    get_node,
    load_nodes,
    min_detectable_area,
    parse_nodes_csv,
    required_state_bits,
)
from irisim.imager import render
from irisim.layout import inject_trojan
from irisim.optics import OpticalConfig
from irisim.verify import compare

N28 = get_node("28nm")

nodes = st.builds(
    lambda nand, ratio: ProcessNode("x", 10.0, 1.0, nand, nand * ratio),
    st.floats(0.01, 5.0), st.floats(1.5, 10.0),
)


def test_bypass_area_arithmetic():
    assert bypass_area(0, N28, 7) == 0
    assert bypass_area(1, N28, 4) == N28.flipflop_area_um2 + 4 * N28.nand2_area_um2 == 5.0
    assert bypass_area(6, N28, 4) == 2 * bypass_area(3, N28, 4)
    with pytest.raises(DomainError):
        bypass_area(-1, N28)


def test_min_detectable_area():
    assert min_detectable_area(1.67, 1) == pytest.approx(2.79, abs=0.01)
    assert min_detectable_area(1.67, 4) == pytest.approx(4 * min_detectable_area(1.67, 1), rel=1e-15)
    assert min_detectable_area(1.0, 9) == 9.0
    assert min_detectable_area(OpticalConfig(microns_per_pixel=2.0), 1) == 4.0
    with pytest.raises(DomainError):
        min_detectable_area(1.67, 0)


def test_28nm_needs_a_few_bits():
    b = required_state_bits(N28, OpticalConfig())
    assert 1 <= b.required_bits <= 8
    assert b.required_bits == 3  # 11.16 / 5.0 rounded up


def test_smaller_geometry_needs_more_state():
    base = required_state_bits(N28, 1.67).required_bits
    assert required_state_bits(N28.scaled(0.25), 1.67).required_bits >= base
    assert required_state_bits(get_node("7nm"), 1.67).required_bits >= base


def test_boundary_exactly_one_bit():
    node = ProcessNode("edge", 28, 0.8, 0.25, 1.79)  # per bit 1.79 + 4 * 0.25 = 2.79
    assert required_state_bits(node, 1.0, 4, 1).required_bits == 1
    exact = ProcessNode("edge2", 28, 0.8, 1.0, 5.0)  # per bit 9.0 = 9 px at 1 um/px
    assert required_state_bits(exact, 1.0, 4, 9).required_bits == 1


def test_zero_per_bit_area_diverges():
    free = SimpleNamespace(name="free", nand2_area_um2=0.0, flipflop_area_um2=0.0)
    with pytest.raises(DomainError):
        required_state_bits(free, 1.67)
    with pytest.raises(ValidationError):
        ProcessNode("bad", 28, 0.8, 0.0, 1.0)


@pytest.mark.parametrize("gates", [0, 1, 4, 9])
@pytest.mark.parametrize("pixels", [1, 2, 4, 16])
def test_minimality_exhaustive(gates, pixels):
    for b in range(1, 65):
        # choose a pitch whose target lands exactly between b-1 and b bits
        per_bit = bypass_area(1, N28, gates)
        for frac in (0.01, 0.5, 1.0):
            target = per_bit * (b - 1 + frac)
            mpp = np.sqrt(target / pixels)
            res = required_state_bits(N28, mpp, gates, pixels)
            assert bypass_area(res.required_bits, N28, gates) >= res.min_detectable_area
            if res.required_bits > 1:
                assert bypass_area(res.required_bits - 1, N28, gates) < res.min_detectable_area
            # linear scan oracle
            n = 1
            while bypass_area(n, N28, gates) < res.min_detectable_area:
                n += 1
            assert res.required_bits == n


@given(nodes, st.floats(0.2, 5.0), st.floats(1.01, 3.0), st.integers(1, 16), st.integers(0, 8))
def test_monotonicity(node, mpp, factor, pixels, gates):
    base = required_state_bits(node, mpp, gates, pixels).required_bits
    assert required_state_bits(node, mpp * factor, gates, pixels).required_bits >= base
    assert required_state_bits(node, mpp, gates, pixels + 1).required_bits >= base
    assert required_state_bits(node.scaled(factor), mpp, gates, pixels).required_bits <= base
    bigger_ff = ProcessNode("f", 1, 1, node.nand2_area_um2, node.flipflop_area_um2 * factor)
    assert required_state_bits(bigger_ff, mpp, gates, pixels).required_bits <= base


def test_node_table():
    nodes = load_nodes()
    assert {"28nm", "55nm", "7nm"} <= set(nodes)
    assert nodes["28nm"].cell_height_um == 0.8
    for n in nodes.values():
        assert n.flipflop_area_um2 == pytest.approx(6 * n.nand2_area_um2)
    with pytest.raises(KeyError, match="28nm"):
        get_node("3nm")
    with pytest.raises(ParseError, match="line 1"):
        parse_nodes_csv("a,b\n")
    with pytest.raises(ParseError, match="line 2"):
        parse_nodes_csv("name,feature_nm,cell_height_um,nand2_area_um2,flipflop_area_um2\nx,1,2\n")


def test_budget_outputs():
    b = required_state_bits(N28, 1.67)
    doc = json.loads(b.to_json())
    assert doc["required_bits"] == 3 and doc["node"]["name"] == "28nm"
    lines = b.table().splitlines()
    assert len({line.index(line.split("  ")[-1].strip()) for line in lines}) == 1


def test_bypass_sized_edit_is_visible(fig12_512):
    """A bypass as large as the required state is seen; a tenth of it is not."""
    budget = required_state_bits(N28, OpticalConfig())
    ref = render(fig12_512, OpticalConfig(), seed=0)
    rng = np.random.default_rng(21)
    hits = {1: 0, 10: 0}
    for i in range(20):
        center = (rng.uniform(40, 500), rng.uniform(40, 450))
        delta = rng.choice([-1, 1]) * rng.uniform(0.3, 0.4)
        for div in hits:
            sample = render(inject_trojan(fig12_512, center, budget.bypass_area_at_required / div, delta),
                            OpticalConfig(), seed=100 + i)
            rep = compare(ref, sample)
            hits[div] += any(a.contains_um(*center) for a in rep.anomalies)
    assert hits[1] >= 17
    assert hits[10] == 0
