import json
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lowreg_bnf.lattice import InvalidInput, Lattice, japanese_bracket
from lowreg_bnf.resonance import (BootstrapParams, DivisorQuery, HypothesisFailure, PotentialLaw,
                                  bootstrap_step, bootstrap_weak_to_strong, combinations_with_replacement,
                                  fit_accumulation, fit_weak_nonresonance, genericity_montecarlo, is_paired, kappa,
                                  naive_strong_scan, partial_fraction_divisor, second_derivative_separation,
                                  small_divisor, verify_limited_nonresonance, verify_strong_nonresonance)
from lowreg_bnf.spectra import (FrequencyFamily, Potential, dirichlet_spectrum, kg_frequencies, neumann_spectrum,
                                nls2_frequencies, periodic_spectrum_even, sturm_frequencies)

KG1 = kg_frequencies(1.0, 20)


def test_kappa_examples():
    assert kappa(KG1, (1, -1), (4, 4)) == math.inf
    assert kappa(KG1, (1, 1, -1), (1, 2, 3)) == pytest.approx(math.sqrt(2))
    lat = Lattice.interval(1, 3)
    w = FrequencyFamily(lat, [2.0, 2.0, 5.0])
    assert kappa(w, (1, -1, 1), (1, 2, 3)) == pytest.approx(japanese_bracket(3))


def test_small_divisor_examples():
    assert small_divisor(KG1, DivisorQuery.from_ell((1, -1), (1, 2))) == pytest.approx(math.sqrt(2) - math.sqrt(5))
    assert small_divisor(KG1, (1, 1, -1), (1, 1, 2)) == pytest.approx(2 * math.sqrt(2) - math.sqrt(5))
    assert small_divisor(KG1, (1, -1), (7, 7)) == 0


def test_query_forms():
    q = DivisorQuery.from_ell((2, -1), (1, 3))
    assert q.sigma == (1, 1, -1) and q.order == 3
    assert q.to_ell() == ((2, -1), ((1,), (3,)))
    with pytest.raises(InvalidInput):
        DivisorQuery.from_ell((1, 0), (1, 2))
    with pytest.raises(InvalidInput):
        DivisorQuery.from_ell((1, 1), (2, 2))
    with pytest.raises(InvalidInput):
        DivisorQuery((1, 2), ((1,), (2,)))


def test_is_paired():
    assert is_paired(KG1, (1, -1), (5, 5))
    assert not is_paired(KG1, (1, 1, -1), (1, 2, 2))
    assert is_paired(KG1, (1, 1, -1, -1), (3, 4, 4, 3))
    assert not is_paired(KG1, (1, 1, -1, -1), (3, 4, 4, 5))


@given(st.lists(st.integers(1, 20), min_size=1, max_size=5), st.data())
def test_kappa_bounds(n, data):
    sigma = data.draw(st.lists(st.sampled_from([-1, 1]), min_size=len(n), max_size=len(n)))
    k = kappa(KG1, sigma, n)
    if math.isinf(k):
        assert is_paired(KG1, sigma, n) or abs(small_divisor(KG1, sigma, n)) < 1e-12
    else:
        assert min(japanese_bracket(m) for m in n) <= k <= max(japanese_bracket(m) for m in n)


def test_combinations_cover_multisets():
    rows = np.concatenate(list(combinations_with_replacement(5, 3, chunk=7)))
    assert rows.shape == (math.comb(7, 3), 3)
    assert np.all(np.diff(rows, axis=1) >= 0)
    assert len({tuple(r) for r in rows}) == rows.shape[0]


def test_kg_massless_is_resonant():
    cert = verify_strong_nonresonance(kg_frequencies(0.0, 6), 3, index_range=6)
    assert not cert.valid
    assert (((1,), 1), ((2,), 1), ((3,), -1)) in cert.violation_set()


def test_kg_massive_certificate():
    cert = verify_strong_nonresonance(KG1, 3, index_range=20)
    assert cert.valid and cert.violations == []
    assert cert.gamma(3) > 0
    assert cert.paired_count > 0
    json.loads(cert.to_json())


CORPUS = [
    (kg_frequencies(1.0, 12), 3, 12),
    (kg_frequencies(1.0, 6), 4, 6),
    (kg_frequencies(0.0, 8), 3, 8),
    (kg_frequencies(0.0, 5), 4, 5),
    (kg_frequencies(2.0, 5), 4, 5),
    (kg_frequencies(0.5, 5), 4, 5),
    (nls2_frequencies({}, 1), 3, 1),
    (sturm_frequencies(dirichlet_spectrum(Potential.zero(), 7)), 3, 7),
    (sturm_frequencies(dirichlet_spectrum(Potential.cosine([0.0, 0.02, 0.01]), 6)), 4, 6),
]


@pytest.mark.parametrize("omega, r, rng_", CORPUS)
def test_matches_naive_enumerator(omega, r, rng_):
    cert = verify_strong_nonresonance(omega, r, index_range=rng_)
    ref = naive_strong_scan(omega, r, index_range=rng_)
    assert cert.violation_set() == ref["violations"]
    for k in range(1, r + 1):
        assert cert.per_order[k].min_divisor == ref["min_divisor"][k]


def test_kappa_cutoff_matches_naive():
    omega = kg_frequencies(1.0, 8)
    cert = verify_strong_nonresonance(omega, 3, N_max=3.0, index_range=8)
    ref = naive_strong_scan(omega, 3, N_max=3.0, index_range=8)
    assert all(cert.per_order[k].min_divisor == ref["min_divisor"][k] for k in (1, 2, 3))
    assert cert.per_order[3].n_skipped_kappa > 0


def test_checkpoint_resume(tmp_path):
    path = str(tmp_path / "ck.json")
    a = verify_strong_nonresonance(KG1, 3, index_range=10, checkpoint=path)
    b = verify_strong_nonresonance(KG1, 3, index_range=10, checkpoint=path)
    assert a.to_json() == b.to_json()
    with pytest.raises(InvalidInput):
        verify_strong_nonresonance(kg_frequencies(2.0, 20), 3, index_range=10, checkpoint=path)


def test_limited_r2_reduces_to_gaps():
    w = sturm_frequencies(dirichlet_spectrum(Potential.cosine([0.0, 0.1, 0.05]), 10))
    cert = verify_limited_nonresonance(w, 2, 10.0, 10)
    vals = [w[n] for n in range(1, 11)]
    gaps = [abs(a - b) for i, a in enumerate(vals) for b in vals[i + 1:]]
    smallest_single = min(abs(v) for v in vals)
    smallest_double = min(2 * abs(v) for v in vals)
    assert cert.per_order[2].min_divisor == pytest.approx(min(gaps + [smallest_double]), rel=1e-12)
    assert cert.per_order[1].min_divisor == pytest.approx(smallest_single, rel=1e-12)


def test_limited_even_periodic_positive_and_range_monotone():
    V = Potential.cosine([0.0, 0.02, -0.01, 0.005])
    w = sturm_frequencies(periodic_spectrum_even(V, 24))
    c24 = verify_limited_nonresonance(w, 4, 3.0, 24)
    assert c24.valid and c24.gamma(4) > 0 and "24" in c24.caveat
    c12 = verify_limited_nonresonance(w, 4, 3.0, 12)
    assert c24.min_divisor <= c12.min_divisor


def test_bootstrap_step_branches():
    p = BootstrapParams(alpha=2.0, gamma=0.5, mu=0.0, C=0.6, nu=1.0, r=3)
    st_ = bootstrap_step(1.5, 0.1, p)
    assert st_["case1"] == (1.5, 0.05)
    assert st_["case2"][0] == pytest.approx(2.0 * 1.5 / 1.0)
    assert st_["case2"][1] == pytest.approx(0.5 * (0.1 / (2 * 0.6 * 3)) ** 2.0)
    assert st_["combined"] == (max(1.5, 3.0), min(0.05, st_["case2"][1]))


def test_bootstrap_kg_certifies():
    w = kg_frequencies(1.0, 32)
    alpha, gamma, _ = fit_weak_nonresonance(w, 3, 0.0, 32)
    C = fit_accumulation(w, 0.0, 1.0, 32)
    assert C <= 1.0  # |omega_n - n| <= m/(2n) with <n> >= n
    rep = bootstrap_weak_to_strong(BootstrapParams(alpha, gamma, 0.0, C, 1.0, 3), w, 32)
    assert rep.sequence[0]["beta"] == alpha and rep.sequence[0]["eta"] == gamma
    assert rep.failures == [] and rep.min_ratio >= 1


def test_bootstrap_rejects_false_hypothesis():
    w = kg_frequencies(1.0, 16)
    with pytest.raises(HypothesisFailure):
        bootstrap_weak_to_strong(BootstrapParams(0.1, 10.0, 0.0, 1.0, 1.0, 3), w, 16)
    with pytest.raises(HypothesisFailure):
        fit_weak_nonresonance(kg_frequencies(0.0, 6), 2, 0.0, 6)


def test_partial_fractions():
    assert partial_fraction_divisor((1,), (0,)) == (1, Fraction(1))
    assert partial_fraction_divisor((1, -1), (1, 2)) == (3, Fraction(12, 35))
    with pytest.raises(InvalidInput):
        partial_fraction_divisor((1, 1), (2, 1))


@settings(max_examples=30)
@given(st.lists(st.integers(0, 15), min_size=1, max_size=4, unique=True), st.data())
def test_partial_fraction_nonzero(n, data):
    n = sorted(n)
    ell = data.draw(st.lists(st.integers(-3, 3).filter(bool), min_size=len(n), max_size=len(n)))
    j, v = partial_fraction_divisor(ell, n)
    assert v != 0 and j not in set(n) | {2 * m for m in n}


def test_second_derivative_separation_at_zero():
    ed = dirichlet_spectrum(Potential.zero(), 8, 64)
    en = neumann_spectrum(Potential.zero(), 8, 64)
    ell, n = (1, -1), (1, 2)
    j, val = second_derivative_separation(ed, en, ell, n)
    assert j == 3
    assert val == pytest.approx(2 * sum(c / (4 * m * m - j * j) for c, m in zip(ell, n)), rel=1e-8)


def test_second_derivative_separation_degrades_linearly():
    ell, n = (1, -1), (1, 2)
    base = Potential.cosine([0.0, 0.5, 0.3])
    vals, norms = [], []
    for t in (0.0, 0.02, 0.04, 0.08):
        V = base.scaled(t)
        norms.append(V.H1_norm)
        vals.append(second_derivative_separation(dirichlet_spectrum(V, 8, 64), neumann_spectrum(V, 8, 64), ell, n)[1])
    # deviation from the V = 0 value is bounded by a fitted multiple of ||V||
    slope = max(abs(v - vals[0]) / nv for v, nv in zip(vals[1:], norms[1:]))
    assert slope < 0.1
    assert all(abs(v) >= abs(vals[0]) - slope * nv for v, nv in zip(vals, norms))


def test_genericity_empty_and_small():
    rep = genericity_montecarlo(PotentialLaw("gaussian-fourier", amplitude=0.01, norm_bound=0.05), 0, 3)
    assert rep.trials == 0 and rep.min_divisors == [] and rep.quantiles() == {}
    rep = genericity_montecarlo(PotentialLaw("gaussian-fourier", modes=4, amplitude=0.01, norm_bound=0.05),
                                3, 3, index_range=6, seed=1)
    assert rep.n_violations == 0 and all(x < 0.05 for x in rep.norms)
    again = genericity_montecarlo(PotentialLaw("gaussian-fourier", modes=4, amplitude=0.01, norm_bound=0.05),
                                  3, 3, index_range=6, seed=1)
    assert json.dumps(rep.to_dict(), sort_keys=True) == json.dumps(again.to_dict(), sort_keys=True)


def test_potential_law_validation_and_conditioning():
    with pytest.raises(InvalidInput):
        PotentialLaw("cauchy")
    law = PotentialLaw("gaussian-cosine", amplitude=1.0, norm_bound=1e-6)
    with pytest.raises(InvalidInput):
        law.sample(np.random.default_rng(0), max_rejections=5)
    V, rej = PotentialLaw("uniform-convolution", modes=2).sample(np.random.default_rng(0))
    assert all(abs(v) <= japanese_bracket(n) ** -2 for n, v in V.items())
    V, rej = PotentialLaw("uniform-convolution", modes=2, amplitude=0.01).sample(np.random.default_rng(0))
    assert all(abs(v) <= 0.01 * japanese_bracket(n) ** -2 for n, v in V.items())
