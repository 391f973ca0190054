import math
from fractions import Fraction

import numpy as np
import pytest
from scipy.integrate import trapezoid
from hypothesis import given, settings, strategies as st

from lowreg_bnf.lattice import InvalidInput, Lattice, State
from lowreg_bnf.spectra import (DegenerateSpectrum, Potential, basis_transform_dirichlet, dirichlet_spectrum,
                                eigenfunction_asymptotics_check, eigenvalue_derivative,
                                eigenvalue_second_derivative, exact_sqrt, hs_equivalence_constant,
                                inverse_basis_transform_dirichlet, kg_frequencies, neumann_spectrum,
                                nls2_frequencies, periodic_spectrum_even, sine_overlap, sturm_frequencies)

SMOOTH = Potential.fourier([0.1, 0.3, -0.2, 0.05], [0.0, 0.15, 0.1], label="smooth")
EVEN = Potential.cosine([0.0, 0.3, -0.2, 0.1], label="even")


def test_zero_potential_dirichlet_is_diagonal():
    E = dirichlet_spectrum(Potential.zero(), 12)
    x = np.linspace(0, math.pi, 101)
    for n in E.indices:
        assert E.eigenvalue(n) == pytest.approx(n * n, rel=1e-13)
        assert np.allclose(E.eigenfunction(n, x), math.sqrt(2 / math.pi) * np.sin(n * x), atol=1e-12)


@pytest.mark.parametrize("c", [-0.7, 0.25, 3.0])
def test_constant_potential_shifts(c):
    V = Potential.constant(c)
    ed = dirichlet_spectrum(V, 10)
    en = neumann_spectrum(V, 10)
    for n in range(1, 11):
        assert ed.eigenvalue(n) == pytest.approx(n * n + c, abs=1e-11)
        assert en.eigenvalue(-n) == pytest.approx(n * n + c, abs=1e-11)
    assert en.eigenvalue(0) == pytest.approx(c, abs=1e-12)


def test_neumann_indexing_and_boundary_derivative():
    en = neumann_spectrum(SMOOTH, 8, 64)
    assert en.indices == [0, -1, -2, -3, -4, -5, -6, -7, -8]
    lam = [en.eigenvalue(n) for n in en.indices]
    assert np.all(np.diff(lam) > 0)
    for n in en.indices:
        d = en.eigenfunction_dx(n, [0.0, math.pi])
        assert np.max(np.abs(d)) < 1e-10
    with pytest.raises(InvalidInput):
        en.row(1)


def test_galerkin_dim_rule():
    with pytest.raises(InvalidInput):
        dirichlet_spectrum(SMOOTH, 16, 32)


def test_eigenfunction_sign_and_normalization():
    E = dirichlet_spectrum(SMOOTH, 8, 64)
    x = np.linspace(0, math.pi, 4001)
    for n in E.indices:
        f = E.eigenfunction(n, x)
        assert trapezoid(f * f, x) == pytest.approx(1.0, abs=1e-6)
        assert trapezoid(f * np.sin(n * x), x) > 0
        # V'(0) != 0 limits sine-basis convergence to k^-5 coefficients
        assert E.residual(n) < 1e-4
    Ec = dirichlet_spectrum(EVEN, 8, 64)
    assert max(Ec.residual(n) for n in Ec.indices) < 1e-8


def test_periodic_splitting_and_residual():
    P = periodic_spectrum_even(EVEN, 6, 48)
    assert P.indices == list(range(-6, 7))
    Z = periodic_spectrum_even(Potential.zero(), 6)
    for n in range(1, 7):
        assert Z.eigenvalue(n) == pytest.approx(Z.eigenvalue(-n), rel=1e-13)
    assert any(abs(P.eigenvalue(n) - P.eigenvalue(-n)) > 1e-6 for n in range(1, 7))
    for n in (1, -1, 3, 0):
        assert P.residual_T(n) <= 10 * max(P.dirichlet.residual(max(n, 1)), 1e-10)
    with pytest.raises(InvalidInput):
        periodic_spectrum_even(SMOOTH, 4)


@pytest.mark.parametrize("n", [1, 2, 5])
def test_first_derivative_at_zero(n):
    ed = dirichlet_spectrum(Potential.zero(), 8)
    en = neumann_spectrum(Potential.zero(), 8)
    W = Potential.mode(2 * n)
    assert eigenvalue_derivative(ed, n, W) == pytest.approx(-0.5, abs=1e-12)
    assert eigenvalue_derivative(en, -n, W) == pytest.approx(0.5, abs=1e-12)
    assert eigenvalue_derivative(ed, n, Potential.constant(1.0)) == pytest.approx(1.0, abs=1e-12)


def test_first_derivative_matches_finite_difference():
    W = Potential.fourier([0.0, 0.4, 0.1], [0.0, -0.2])
    h = 1e-4
    for n in (1, 3, 6):
        E = dirichlet_spectrum(SMOOTH, 8, 64)
        d = eigenvalue_derivative(E, n, W)
        fd = (dirichlet_spectrum(SMOOTH + W.scaled(h), 8, 64).eigenvalue(n)
              - dirichlet_spectrum(SMOOTH + W.scaled(-h), 8, 64).eigenvalue(n)) / (2 * h)
        assert d == pytest.approx(fd, rel=1e-5)


@pytest.mark.parametrize("n, j", [(1, 3), (2, 1), (3, 5), (5, 7)])
def test_second_derivative_at_zero_closed_form(n, j):
    E = dirichlet_spectrum(Potential.zero(), 16, 128)
    v = eigenvalue_second_derivative(E, n, Potential.mode(j)).value
    assert v == pytest.approx(1.0 / (4 * n * n - j * j), rel=1e-8, abs=1e-12)


def test_second_derivative_trivial_direction():
    E = dirichlet_spectrum(Potential.zero(), 8)
    assert eigenvalue_second_derivative(E, 3, Potential.constant(1.0)).value == pytest.approx(0.0, abs=1e-12)


def test_second_derivative_matches_second_difference():
    W = Potential.cosine([0.0, 0.0, 0.5, 0.2])
    h = 1e-3
    E = dirichlet_spectrum(SMOOTH, 8, 64)
    lam = lambda c: dirichlet_spectrum(SMOOTH + W.scaled(c), 8, 64).eigenvalue(2)
    fd = (lam(h) - 2 * lam(0.0) + lam(-h)) / h ** 2
    sd = eigenvalue_second_derivative(E, 2, W)
    assert sd.value == pytest.approx(fd, rel=1e-3)
    assert sd.tail_bound < 1e-6


def test_second_derivative_detects_degeneracy():
    P = periodic_spectrum_even(Potential.zero(), 4)
    # merged list is degenerate; within one kind it is not
    assert eigenvalue_second_derivative(P.dirichlet, 2, Potential.mode(1)).value != 0
    with pytest.raises(DegenerateSpectrum):
        eigenvalue_second_derivative(P.dirichlet, 2, Potential.mode(1), degeneracy_tol=2.0)


def test_asymptotics_residual_scales_like_n_minus_2():
    E = dirichlet_spectrum(SMOOTH, 32, 256)
    assert eigenfunction_asymptotics_check(dirichlet_spectrum(Potential.zero(), 8), 4).sup_residual < 1e-12
    scaled = [eigenfunction_asymptotics_check(E, n).scaled_residual for n in range(8, 33, 4)]
    assert max(scaled) < 5 * SMOOTH.H1_norm


def test_overlaps():
    E0 = dirichlet_spectrum(Potential.zero(), 6)
    for n in range(1, 7):
        for k in range(1, 7):
            assert sine_overlap(E0, n, k) == pytest.approx(float(n == k), abs=1e-13)
    E = dirichlet_spectrum(SMOOTH, 8, 64)
    for n in E.indices:
        assert sum(E.overlap(n, k) ** 2 for k in range(1, 65)) == pytest.approx(1.0, abs=1e-12)


def test_basis_transform_round_trip_and_identity():
    E = dirichlet_spectrum(SMOOTH, 16, 64)
    w = basis_transform_dirichlet(State.from_entries(Lattice.interval(1, 3), {3: 1.0}),
                                  dirichlet_spectrum(Potential.zero(), 16, 64))
    assert w[3] == pytest.approx(1.0) and abs(w[2]) < 1e-14
    rng = np.random.default_rng(0)
    u = np.zeros(64, complex)
    u[:8] = rng.standard_normal(8) + 1j * rng.standard_normal(8)
    back = inverse_basis_transform_dirichlet(basis_transform_dirichlet(u, E), E)
    assert np.max(np.abs(back - u)) < 1e-10


def test_basis_transform_grid_input():
    E = dirichlet_spectrum(Potential.zero(), 8, 32)
    x = np.arange(1, 33) * math.pi / 33
    w = basis_transform_dirichlet({"grid": np.sin(2 * x)}, E)
    assert w[2] == pytest.approx(math.sqrt(math.pi / 2), rel=1e-12)


def test_hs_equivalence_constant_finite():
    E = dirichlet_spectrum(SMOOTH, 16, 64)
    rng = np.random.default_rng(1)
    samples = [rng.standard_normal(16) * np.arange(1, 17) ** -2.0 for _ in range(10)]
    C = hs_equivalence_constant(E, samples, 1.25)
    assert 0.5 < C < 3.0


def test_kg_frequencies():
    w = kg_frequencies(1.0, 20)
    assert w[1] == pytest.approx(math.sqrt(2)) and w[2] == pytest.approx(math.sqrt(5))
    for n in range(1, 21):
        assert abs(w[n] - n) <= 1.0 / (2 * n)
    assert kg_frequencies(0.0, 3).flags
    assert kg_frequencies(0.0, 3).exact[2] == (Fraction(3), 1)
    with pytest.raises(InvalidInput):
        kg_frequencies(-1.0, 3)


def test_nls2_groups():
    w0 = nls2_frequencies({}, 2)
    assert len(w0.group_of((1, 0))) == 4
    w = nls2_frequencies(lambda n: (1 + n[0] ** 2 + n[1] ** 2) ** -1.0 * 0.37, 3)
    # the potential depends on |n|^2 only, so symmetric groups remain
    assert len(w.group_of((1, 0))) == 4
    rng = np.random.default_rng(0)
    draw = {n: rng.uniform(-1, 1) * (1 + n[0] ** 2 + n[1] ** 2) ** -1.0 for n in Lattice.square(3).indices}
    wr = nls2_frequencies(draw, 3)
    assert wr.n_groups == Lattice.square(3).size
    for n in wr.lattice.indices:
        assert abs(wr[n] - n[0] ** 2 - n[1] ** 2) <= (1 + n[0] ** 2 + n[1] ** 2) ** -0.75
    with pytest.raises(InvalidInput):
        nls2_frequencies({(0, 0): 1j}, 1)


def test_sturm_frequencies_exact_only_at_zero():
    assert sturm_frequencies(dirichlet_spectrum(Potential.zero(), 4)).exact is not None
    assert sturm_frequencies(dirichlet_spectrum(SMOOTH, 4)).exact is None


@given(st.fractions(min_value=0, max_value=1000, max_denominator=50))
def test_exact_sqrt(q):
    coef, s = exact_sqrt(q)
    assert coef * coef * s == q


@settings(max_examples=20, deadline=None)
@given(st.floats(-1, 1), st.integers(1, 6))
def test_potential_algebra_and_mean(c, n):
    V = SMOOTH + Potential.constant(c)
    assert V.mean_interval() == pytest.approx(SMOOTH.mean_interval() + c)
    x = np.linspace(0, math.pi, 7)
    assert np.allclose(V.scaled(2.0)(x), 2 * V(x))


def test_potential_json_round_trip():
    back = Potential.from_json(SMOOTH.to_json())
    assert np.array_equal(back.cos_coeffs, SMOOTH.cos_coeffs)
    assert np.array_equal(back.sin_coeffs, SMOOTH.sin_coeffs)
    with pytest.raises(InvalidInput):
        Potential.from_json('{"basis": "nope"}')
