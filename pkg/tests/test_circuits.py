import numpy as np
import pytest

from rasdi.circuits import PRESETS, TS_BASES, Element, Netlist, Waveform, assemble, reference_circuit, parse_netlist
from rasdi.dae import monolithic_solve
from rasdi.errors import FloatingNode, NetlistSyntaxError, SingularAlgebraicBlock, UnknownCircuitId


def _rows(circ):
    sys = circ.system()
    return {nm: {circ.names[j]: v for j, v in enumerate(sys.big_a[i]) if v} for i, nm in enumerate(circ.names)}


def test_ohms_law_loop():
    net = parse_netlist("""
        # a source driving one resistor
        ground 0
        VSRC E 1 0 10 0 0.5
        R R1 1 0 4.5
    """)
    circ = assemble(net)
    assert circ.dae.n1 == 0
    traj = monolithic_solve(circ.system(), 1e-3, 3e-3)
    # branch currents run from n+ to n-, so the source carries minus the load current
    np.testing.assert_allclose(traj.column("i_R1"), 10 / (4.5 + 0.5), rtol=1e-14)
    np.testing.assert_allclose(traj.column("i_E"), -10 / (4.5 + 0.5), rtol=1e-14)


def test_ex1_equations_entrywise():
    circ, _ = reference_circuit("ex1")
    l1, l2, c, g = (PRESETS["ex1"][k] for k in ("l1", "l2", "c", "g"))
    expect = {
        "i1": {"e1": -1 / l1, "e2": 1 / l1},
        "i3": {"e2": -1 / l2, "er": 1 / l2},
        "v1": {"i4": -1 / c},
        "e1": {"i1": 1.0, "i2": 1.0, "i5": 1.0},
        "e2": {"i1": -1.0, "i2": -1.0, "i3": 1.0, "i4": -1.0},
        "e3": {"i4": 1.0, "i5": -1.0, "i6": 1.0},
        "er": {"er": 1.0},
        "i2": {"e1": g, "e2": -g, "i2": -1.0},
        "i4": {"v1": 1.0, "e2": 1.0, "e3": -1.0},
        "i5": {"e1": 1.0, "e3": -1.0},
        "i6": {"i6": -1.0},
    }
    got = _rows(circ)
    assert got.keys() == expect.keys()
    for nm, row in expect.items():
        assert got[nm] == pytest.approx(row, rel=1e-15), nm
    b = circ.system().forcing(2e-3)
    assert b[circ.index("i5")] == pytest.approx(10 * np.cos(2 * np.pi * 50 * 2e-3))
    assert b[circ.index("i6")] == pytest.approx(-1e-3 * np.sin(2 * np.pi * 50 * 2e-3))


def test_ex2_counts_and_second_inductor_to_ground():
    circ, _ = reference_circuit("ex2")
    assert circ.dae.n1 == 3 and circ.dae.n2 == 8
    assert set(_rows(circ)["i1"]) == {"e1", "er"}


def test_emt_ts_circuit_counts_and_rows():
    circ, part = reference_circuit("emt-ts")
    assert circ.dae.n == 16 and circ.dae.n1 == 4
    rows = _rows(circ)
    assert rows["i34"] == pytest.approx({"v3": -1.0, "v4": 1.0, "i34": -77.0})
    assert rows["i12"] == pytest.approx({"v1": -1.0, "v2": 1.0, "i12": -1e-6})
    assert rows["i23"] == pytest.approx({"v2": 1 / 0.7, "v3": -1 / 0.7})
    ts = {circ.names[k] for k in part.base[1]}
    assert ts == set(TS_BASES["emt-ts"][0])


def test_presets_and_overrides():
    circ, _ = reference_circuit("ex2_swapped")
    assert circ.meta["params"]["l1"] == 0.5
    circ, _ = reference_circuit("ex2", l1=0.5, l2=0.7)
    assert circ.meta["params"]["l2"] == 0.7
    nl, _ = reference_circuit("ex2-nonlinear")
    assert nl.meta["nonlinear"]["alpha"] == 2000.0
    with pytest.raises(UnknownCircuitId):
        reference_circuit("ex3")
    with pytest.raises(ValueError):
        reference_circuit("ex1", r1=3.0)
    with pytest.raises(ValueError):
        reference_circuit("ex1", l1=-1.0)


def test_with_values_reassembles():
    circ, _ = reference_circuit("ex1")
    other = circ.with_values(G=5e-3)
    assert _rows(other)["i2"]["e1"] == 5e-3
    assert other.meta == circ.meta


@pytest.mark.parametrize("text, line, col", [
    ("ground 0\nR R1 1 0 abc\n", 2, 10),
    ("ground 0\nQ Q1 1 0 1\n", 2, 1),
    ("ground 0\nR R1 1 0\n", 2, 9),
    ("R R1 1 0 1\n", 1, 1),
    ("ground 0\nVSRC E 1 0 1 50 wave=tri\n", 2, 17),
    ("ground 0\nR R1 1 0 1 colour=red\n", 2, 12),
])
def test_parse_errors_carry_position(text, line, col):
    with pytest.raises(NetlistSyntaxError) as info:
        parse_netlist(text)
    assert (info.value.line, info.value.column) == (line, col)


def test_parse_options_and_sources():
    net = parse_netlist("""ground r
prefix v
L L1 a r 0.1 current=iL
C C1 a r 1e-6 aux=vc
ISRC J r a 2 50 wave=sin
""")
    circ = assemble(net)
    assert circ.names[:2] == ("iL", "vc")
    assert "va" in circ.names
    src = net.element("J").source
    assert isinstance(src, Waveform) and src(0.005) == pytest.approx(2.0)


def test_floating_node_and_singular_pencil():
    net = Netlist((Element("R", "R1", "1", "0", 1.0),), "0", nodes=("1", "2", "0"))
    with pytest.raises(FloatingNode):
        assemble(net)
    # two parallel current sources leave the node voltage undetermined
    net = Netlist((Element("I", "J1", "1", "0", 0.0, Waveform(1.0, 0.0, "dc")),
                   Element("I", "J2", "1", "0", 0.0, Waveform(1.0, 0.0, "dc"))), "0")
    with pytest.raises(SingularAlgebraicBlock):
        assemble(net)


def test_waveform_window():
    w = Waveform(2.0, 50.0, "cos", (0.02, 0.021, 1.5))
    assert w(0.0) == pytest.approx(2.0)
    assert w(0.0205) == pytest.approx(3.0 * np.cos(2 * np.pi * 50 * 0.0205))
    assert Waveform(3.0, 0.0, "dc")(1.7) == 3.0
