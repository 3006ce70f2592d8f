import numpy as np
import pytest

from rasdi.aitken import analytic_p, closed_form_eigs, closed_form_p
from rasdi.circuits import reference_circuit
from rasdi.errors import CoefficientBlowup
from rasdi.nonlinear import (NonlinearElement, elements_from_meta, initial_state, linearize_step, nonlinear_oracle,
                             solve_nonlinear_accelerated, spectral_log_csv)
from rasdi.ras import RasSplitting

DT = 2e-4
L1, L2, C = 0.6, 0.7, 1e-6


def _strong_nonlinear(**kw):
    return reference_circuit("ex2-nonlinear", **kw)


def test_element_blowup():
    el = NonlinearElement("G", "i2", 10.0, 2000.0)
    assert el.value(0.0) == pytest.approx(0.1)
    assert el.value(1e-3) == pytest.approx(1 / 12.0)
    with pytest.raises(CoefficientBlowup):
        el.value(-5e-3)
    with pytest.raises(CoefficientBlowup):
        NonlinearElement("G", "i2", 0.0, 1.0).value(0.0)


def test_blowup_during_run_names_the_step():
    circ, part = _strong_nonlinear(g0=1e-3)
    with pytest.raises(CoefficientBlowup, match="step"):
        solve_nonlinear_accelerated(circ, part, DT, 400 * DT)


def test_zero_alpha_is_the_linear_case():
    circ, part = _strong_nonlinear(alpha=0.0)
    el = elements_from_meta(circ)
    z0 = initial_state(circ, el)
    # frozen conductance 1/g0 at every state
    g = 1 / 10.0
    split = RasSplitting(linearize_step(circ, el, z0), part, DT)
    lin = RasSplitting(circ.with_values(G=g).system(), part, DT)
    np.testing.assert_array_equal(analytic_p(split).p_mat, analytic_p(lin).p_mat)
    tr_a, ops_a = solve_nonlinear_accelerated(circ, part, DT, 40 * DT, reuse=False)
    tr_b, ops_b = solve_nonlinear_accelerated(circ, part, DT, 40 * DT, reuse=True)
    assert np.abs(tr_a.states - tr_b.states).max() <= 1e-10
    # fitted operators are only pinned down on the swept subspace, so compare spectra
    rho_lin = analytic_p(lin).spectral_radius
    for so in ops_a:
        assert so.rho_n == pytest.approx(rho_lin, rel=1e-8)


def test_first_step_eigenvalue_matches_closed_form():
    circ, part = _strong_nonlinear()
    el = elements_from_meta(circ)
    z0 = initial_state(circ, el)
    g = el[0].value(z0[circ.index("i2")])
    _, ops = solve_nonlinear_accelerated(circ, part, DT, DT)
    expect = np.sqrt(L2 / L1 + DT / (L1 * (C / DT + g)))
    assert ops[0].rho_n == pytest.approx(expect, rel=1e-10)
    assert ops[0].rho_n == pytest.approx(1.0816, abs=5e-5)
    assert np.abs(closed_form_eigs("ex2", DT, L1, L2, C, g)).max() == pytest.approx(expect, rel=1e-14)


@pytest.mark.parametrize("i2", [-1e-3, 1e-3])
def test_frozen_operator_tracks_closed_form(i2):
    circ, part = _strong_nonlinear()
    el = elements_from_meta(circ)
    z = np.zeros(circ.dae.n)
    z[circ.index("i2")] = i2
    split = RasSplitting(linearize_step(circ, el, z), part, DT)
    names = [circ.names[k] for k in split.imap.gamma]
    perm = [k for k, nm in enumerate(names) if nm != "i1"] + [names.index("i1")]
    g = el[0].value(i2)
    np.testing.assert_allclose(analytic_p(split).p_mat[np.ix_(perm, perm)], closed_form_p("ex2", DT, L1, L2, C, g),
                               atol=1e-10)


def test_spectral_radius_falls_as_current_rises():
    # a larger i2 lowers G, which weakens the local damping C/dt + G
    el = NonlinearElement("G", "i2", 10.0, 2000.0)
    currents = np.linspace(-4e-3, 4e-3, 9)
    rho = [np.abs(closed_form_eigs("ex2", DT, L1, L2, C, el.value(i))).max() for i in currents]
    assert np.all(np.diff(rho) > 0)


def test_strong_nonlinear_run_matches_oracle_and_stays_divergent(tmp_path):
    circ, part = _strong_nonlinear()
    tr, ops = solve_nonlinear_accelerated(circ, part, DT, 250 * DT)
    ref = nonlinear_oracle(circ, DT, 250 * DT)
    assert np.abs(tr.states - ref.states).max() <= 1e-8
    rho = np.array([ops[n - 1].rho_n for n in (1, 25, 250)])
    assert np.all(rho > 1.0)
    assert (rho.max() - rho.min()) / rho.min() < 0.01
    spectral_log_csv(ops, tmp_path / "rho.csv")
    assert len((tmp_path / "rho.csv").read_text().splitlines()) == 251
