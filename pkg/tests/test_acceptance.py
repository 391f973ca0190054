"""Acceptance criteria 1-11, each at its stated tolerance.

Each test records a one-line PASS/FAIL summary (printed at the end of the
session) before asserting.  Criteria 5-10 write their artifacts through the
CLI or as sorted JSON so that criterion 11 can rerun them and compare bytes.
"""
import json
import math
import os
import time

import numpy as np
import pytest

from lowreg_bnf.cli import random_sparse_hamiltonian, run
from lowreg_bnf.dynamics import ModelSpec, Nonlinearity, initial_state, integrate, make_system
from lowreg_bnf.hamilton import evaluate, gradient, poisson_bracket
from lowreg_bnf.lattice import Lattice, random_state
from lowreg_bnf.resonance import kappa, naive_strong_scan, verify_strong_nonresonance
from lowreg_bnf.spectra import (Potential, dirichlet_spectrum, eigenvalue_derivative, eigenvalue_second_derivative,
                                kg_frequencies, neumann_spectrum, nls2_frequencies, sturm_frequencies)
from tests.acceptance_results import record

SEED = 0


def check(n, ok, detail):
    record(n, bool(ok), detail)
    assert ok, detail


def read(path, name):
    with open(os.path.join(path, name)) as fh:
        return fh.read()


# ---------------------------------------------------------------------------
# artifact producers for criteria 5-10 (each returns {name: json text})


def _cli(argv, out):
    code = run(argv + ["--seed", str(SEED), "--out", out])
    files = {}
    for name in sorted(os.listdir(out)):
        if name.endswith(".json"):
            files[name] = read(out, name)
    return files, code


def _dump(obj):
    return json.dumps(obj, sort_keys=True, indent=1, default=float)


CORPUS = [
    ("kg m=1", kg_frequencies(1.0, 12), 3, 12),
    ("kg m=1", kg_frequencies(1.0, 6), 4, 6),
    ("kg m=0", kg_frequencies(0.0, 12), 3, 12),
    ("kg m=0", kg_frequencies(0.0, 5), 4, 5),
    ("kg m=2", kg_frequencies(2.0, 5), 4, 5),
    ("kg m=0.5", kg_frequencies(0.5, 5), 4, 5),
    ("nls2 V=0", nls2_frequencies({}, 1), 3, 1),
    ("sturm V=0", sturm_frequencies(dirichlet_spectrum(Potential.zero(), 7)), 3, 7),
    ("sturm cos", sturm_frequencies(dirichlet_spectrum(Potential.cosine([0.0, 0.02, 0.01]), 6)), 4, 6),
]


def produce_5(root):
    rows = []
    for label, omega, r, rng_ in CORPUS:
        cert = verify_strong_nonresonance(omega, r, index_range=rng_)
        ref = naive_strong_scan(omega, r, index_range=rng_)
        rows.append({"label": label, "r": r, "range": rng_,
                     "same_violations": cert.violation_set() == ref["violations"],
                     "n_violations": len(ref["violations"]),
                     "same_min": all(cert.per_order[k].min_divisor == ref["min_divisor"][k] for k in range(1, r + 1)),
                     "min_divisor": {str(k): ref["min_divisor"][k] for k in range(1, r + 1)}})
    f0, c0 = _cli(["resonance", "--model", "kg", "--mass", "0", "--order", "3", "--range", "12"], root + "/m0")
    f1, c1 = _cli(["resonance", "--model", "kg", "--mass", "1", "--order", "3", "--range", "12"], root + "/m1")
    return {"corpus.json": _dump(rows), **{"m0/" + k: v for k, v in f0.items()},
            **{"m1/" + k: v for k, v in f1.items()}}, (c0, c1)


def produce_6(root):
    return _cli(["bootstrap", "--mass", "1", "--order", "3", "--range", "64"], root)


def produce_7(root):
    return _cli(["normal-form", "--mass", "1", "--K", "12", "--g-power", "2", "--r", "5", "--N", "4",
                 "--samples", "20", "--halvings", "4"], root)


CRIT8_NLS = ModelSpec("NLS1D_Dir", 8, g=Nonlinearity.power(1.0, 1))
CRIT8_KG = ModelSpec("KG1D", 12)


def _energy_drift(model, dt):
    sysm = make_system(model)
    u0 = initial_state(sysm, 0.3, np.random.default_rng(SEED), decay=2)
    H = integrate(sysm, u0, 2.0, dt, samples=400).array("H")
    return float(np.max(np.abs(H - H[0])))


def produce_8(root):
    out = {}
    sysm = make_system(CRIT8_NLS)
    u0 = initial_state(sysm, 0.3, np.random.default_rng(SEED), decay=2)
    tr = integrate(sysm, u0, 100.0, 0.01, samples=100)
    M = tr.array("M")
    out["mass"] = {"steps": tr.meta["steps"], "rel_drift": float(np.max(np.abs(M - M[0])) / M[0])}
    for name, model in (("nls", CRIT8_NLS), ("kg", CRIT8_KG)):
        d = [_energy_drift(model, dt) for dt in (0.01, 0.005, 0.0025)]
        out["energy_" + name] = {"drifts": d, "ratios": [d[0] / d[1], d[1] / d[2]]}
    lin = []
    for model in (ModelSpec("KG1D", 12, g=Nonlinearity.zero()), ModelSpec("NLS1D_Dir", 8, g=Nonlinearity.zero())):
        sysm = make_system(model)
        u0 = initial_state(sysm, 0.3, np.random.default_rng(SEED))
        A = np.asarray(integrate(sysm, u0, 100.0, 0.01, samples=100).amplitudes)
        lin.append(float(np.max(np.abs(A - A[0]))))
    out["linear_action_drift"] = max(lin)
    return {"dynamics.json": _dump(out)}, out


def produce_9(root):
    return _cli(["scaling", "--model", "kg", "--mass", "1", "--K", "12", "--g-power", "2", "--r", "5",
                 "--eps", "0.1,0.05,0.025", "--seeds", "2", "--modes", "4", "--dt", "0.05", "--K-compare", "24",
                 "--jobs", "4"], root)


def produce_10(root):
    return _cli(["genericity", "--trials", "50", "--order", "3", "--range", "12", "--range-2d", "6", "--s", "2",
                 "--jobs", "4"], root)


PRODUCERS = {5: produce_5, 6: produce_6, 7: produce_7, 8: produce_8, 9: produce_9, 10: produce_10}


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    """Lazily computed first-run artifacts, shared between a criterion and criterion 11."""
    cache = {}

    def get(k):
        if k not in cache:
            root = str(tmp_path_factory.mktemp(f"crit{k}_a"))
            t = time.perf_counter()
            files, extra = PRODUCERS[k](root)
            cache[k] = (root, files, extra, time.perf_counter() - t)
        return cache[k]

    return get


# ---------------------------------------------------------------------------
# 1-4


def test_criterion_1_spectral_exactness():
    t = time.perf_counter()
    worst = 0.0
    n = np.arange(1, 33)
    D = dirichlet_spectrum(Potential.zero(), 32, 256)
    worst = max(worst, float(np.max(np.abs(np.array([D.eigenvalue(k) for k in n]) / n ** 2 - 1))))
    N = neumann_spectrum(Potential.zero(), 32, 256)
    worst = max(worst, float(np.max(np.abs(np.array([N.eigenvalue(-k) for k in n]) / n ** 2 - 1))))
    dt = time.perf_counter() - t
    check(1, worst <= 1e-10 and dt < 10, f"max rel err {worst:.2e} (<= 1e-10), {dt:.2f} s (< 10 s)")


RAW_POTENTIALS = [
    Potential.fourier([0.1, 0.3, -0.2], [0.0, 0.2]),
    Potential.cosine([0.0, 0.4, 0.1, -0.05]),
    Potential.fourier([0.2, 0.0, 0.15], [0.0, -0.3, 0.1]),
    Potential.fourier([-0.1, 0.25], [0.0, 0.0, 0.0, 0.08]),
    Potential.cosine([0.05, 0.0, 0.0, 0.2, 0.0, 0.05]),
]
SMOOTH_POTENTIALS = [V.scaled(0.9 / V.H1_norm) for V in RAW_POTENTIALS]


def test_criterion_2_eigenvalue_asymptotics():
    n = np.arange(8, 65)
    slopes = []
    for V in SMOOTH_POTENTIALS:
        assert V.H1_norm <= 1
        E = dirichlet_spectrum(V, 64, 512)
        dev = np.abs(np.array([E.eigenvalue(k) for k in n]) - n ** 2 - V.mean_interval())
        slopes.append(float(np.polyfit(np.log(n), np.log(dev), 1)[0]))
    ok = all(-1.4 <= s <= -0.6 for s in slopes)
    check(2, ok, "slopes " + ", ".join(f"{s:.2f}" for s in slopes) + " (target [-1.4, -0.6])")


def test_criterion_3_eigenvalue_derivatives():
    V = Potential.fourier([0.1, 0.3, -0.2, 0.05], [0.0, 0.15, 0.1])
    W = Potential.fourier([0.0, 0.4, 0.1], [0.0, -0.2])
    E = dirichlet_spectrum(V, 8, 64)
    lam = lambda c, n: dirichlet_spectrum(V + W.scaled(c), 8, 64).eigenvalue(n)
    first = 0.0
    for n in range(1, 7):
        fd = (lam(1e-4, n) - lam(-1e-4, n)) / 2e-4
        first = max(first, abs(eigenvalue_derivative(E, n, W) - fd) / abs(fd))
    W2 = Potential.cosine([0.0, 0.0, 0.5, 0.2])
    lam2 = lambda c, n: dirichlet_spectrum(V + W2.scaled(c), 8, 64).eigenvalue(n)
    second = 0.0
    for n in (1, 2, 3):
        fd = (lam2(1e-3, n) - 2 * lam2(0.0, n) + lam2(-1e-3, n)) / 1e-6
        second = max(second, abs(eigenvalue_second_derivative(E, n, W2).value - fd) / abs(fd))
    E0 = dirichlet_spectrum(Potential.zero(), 40, 256)
    closed = 0.0
    for n in range(1, 9):
        for j in range(1, 17):
            if j in (n, 2 * n):  # admissible: j outside {n, 2n}
                continue
            v = eigenvalue_second_derivative(E0, n, Potential.mode(j)).value
            closed = max(closed, abs(v - 1.0 / (4 * n * n - j * j)))
    ok = first <= 1e-5 and second <= 1e-3 and closed <= 1e-8
    check(3, ok, f"first rel {first:.1e} (<= 1e-5), second rel {second:.1e} (<= 1e-3), "
                 f"closed form abs {closed:.1e} (<= 1e-8)")


def test_criterion_4_bracket_oracle_and_jacobi():
    rng = np.random.default_rng(SEED)
    worst = 0.0
    for _ in range(50):
        lat = Lattice.interval(1, int(rng.integers(2, 10)))
        H = random_sparse_hamiltonian(lat, rng)
        K = random_sparse_hamiltonian(lat, rng)
        B = poisson_bracket(H, K)
        for _ in range(20):
            u = random_state(lat, 1.0, 0.0, rng)
            gH, gK = gradient(H, u.values), gradient(K, u.values)
            ref = float(np.sum(np.real(np.conj(1j * gH) * gK)))
            worst = max(worst, abs(evaluate(B, u) - ref) / (np.linalg.norm(gH) * np.linalg.norm(gK)))
    jac = 0.0
    for _ in range(10):
        lat = Lattice.interval(1, int(rng.integers(2, 6)))
        A, B_, C = (random_sparse_hamiltonian(lat, rng, degrees=(3,), terms=3) for _ in range(3))
        parts = [poisson_bracket(A, poisson_bracket(B_, C)), poisson_bracket(B_, poisson_bracket(C, A)),
                 poisson_bracket(C, poisson_bracket(A, B_))]
        u = random_state(lat, 1.0, 0.0, rng)
        vals = [evaluate(p, u) for p in parts]
        jac = max(jac, abs(sum(vals)) / max(sum(abs(v) for v in vals), 1e-300))
    check(4, worst <= 1e-10 and jac <= 1e-9, f"bracket rel {worst:.1e} (<= 1e-10), Jacobi rel {jac:.1e} (<= 1e-9)")


# ---------------------------------------------------------------------------
# 5-10


def test_criterion_5_nonresonance_equivalence(runs):
    root, files, (c0, c1), _ = runs(5)
    rows = json.loads(files["corpus.json"])
    equiv = all(r["same_violations"] and r["same_min"] for r in rows)
    m0 = json.loads(files["m0/error.json"]) if "m0/error.json" in files else {}
    m1 = json.loads(files["m1/certificate.json"])
    gamma3 = m1["per_order"]["3"]["gamma"]
    ok = equiv and c0 == 1 and bool(m0) and c1 == 0 and m1["valid"] and gamma3 > 0
    check(5, ok, f"{sum(r['same_violations'] and r['same_min'] for r in rows)}/{len(rows)} corpus matches, "
                 f"m=0 exit {c0}, m=1 exit {c1} gamma_3 = {gamma3:.3g}")


def test_criterion_6_bootstrap(runs):
    root, files, code, _ = runs(6)
    rep = json.loads(files["bootstrap.json"])
    init = rep["sequence"][0]
    exact_init = init["beta"] == rep["params"]["alpha"] and init["eta"] == rep["params"]["gamma"]
    ok = code == 0 and exact_init and not rep["failures"] and rep["min_ratio"] >= 1 and rep["n_checked"] > 0
    check(6, ok, f"{rep['n_checked']} queries, min ratio {rep['min_ratio']:.3g} (>= 1), "
                 f"beta {rep['beta']:.3g}, eta {rep['eta']:.3g}, init exact {exact_init}")


def test_criterion_7_normal_form(runs):
    root, files, code, secs = runs(7)
    assert code == 0
    cert = json.loads(files["certificate.json"])
    ver = json.loads(files["verification.json"])
    omega = kg_frequencies(1.0, 12)
    kap = [kappa(omega, [s for _, s in t["key"]], [n for n, _ in t["key"]])
           for t in json.loads(files["Q_res.json"])]
    a = all(k > 4 for k in kap)
    b = all(s["homological_exact"] for s in cert["steps"])
    hres = max(s["homological_residual"] for s in cert["steps"])
    conj = ver["conjugacy"]
    c = len(conj["samples"]) == 20 and conj["max_conjugacy_residual"] <= 1e-8 \
        and conj["radius"] == pytest.approx(cert["epsilon0"] / 2, rel=1e-12)
    rs = ver["remainder_scaling"]
    d = len(rs["table"]) == 5 and 3.6 <= rs["slope"] <= 4.4
    ok = a and b and c and d and secs < 600
    check(7, ok, f"(a) {len(kap)} resonant keys, min kappa {min(kap):.3g} > 4: {a}; (b) homological residual "
                 f"{hres:.1e}: {b}; (c) conjugacy {conj['max_conjugacy_residual']:.1e}: {c}; "
                 f"(d) slope {rs['slope']:.3f}: {d}; {secs:.1f} s")


def test_criterion_8_conservation(runs):
    root, files, out, _ = runs(8)
    mass = out["mass"]["rel_drift"] <= 1e-11 and out["mass"]["steps"] >= 10_000
    ratios = out["energy_nls"]["ratios"] + out["energy_kg"]["ratios"]
    energy = all(3.5 <= r <= 4.5 for r in ratios)
    lin = out["linear_action_drift"] <= 1e-12
    check(8, mass and energy and lin,
          f"mass {out['mass']['rel_drift']:.1e} over {out['mass']['steps']} steps, energy ratios "
          + ", ".join(f"{r:.2f}" for r in ratios) + f", linear action drift {out['linear_action_drift']:.1e}")


def test_criterion_9_drift_scaling(runs):
    root, files, code, secs = runs(9)
    res = json.loads(files["scaling.json"])
    ok = code == 0 and not res["flagged"] and 2.5 <= res["slope"] <= 3.5 and res["max_rel_change"] < 0.1 \
        and secs < 1800
    check(9, ok, f"slope {res['slope']:.3f} (target 3), radius-doubling change {res['max_rel_change']:.1e}, "
                 f"{secs:.1f} s")


def test_criterion_10_genericity(runs):
    root, files, code, _ = runs(10)
    reps = json.loads(files["genericity.json"])["reports"]
    ok = code == 0 and len(reps) == 3 and all(r["trials"] == 50 and r["n_violations"] == 0 for r in reps) \
        and os.path.exists(os.path.join(root, "genericity.csv"))
    check(10, ok, ", ".join(f"{r['law']['kind']}: {r['n_violations']} violations / {r['trials']}" for r in reps))


# ---------------------------------------------------------------------------
# 11


def test_criterion_11_determinism(runs, tmp_path):
    diffs = []
    for k, producer in PRODUCERS.items():
        _, first, _, _ = runs(k)
        second, _ = producer(str(tmp_path / f"crit{k}_b"))
        if first != second:
            diffs.append(k)
    check(11, not diffs, "JSON byte-identical for criteria 5-10" if not diffs else f"differs for {diffs}")
