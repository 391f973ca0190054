"""Iterative Birkhoff normal form on truncated lattices."""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .hamilton import (FlowResult, PolyHamiltonian, QuadraticDiagonal, _cplx, _derivative_table, _real,
                       evaluate, flow, gradient, group_indicator, operator_norm, poisson_bracket, poisson_with_Z2)
from .lattice import InvalidInput, Lattice, State, hs_norm, random_state
from .resonance import ResonanceViolation, kappa_rows, verify_strong_nonresonance
from .spectra import FrequencyFamily


@dataclass(frozen=True)
class NormalFormConfig:
    p: int
    r: int
    N: float
    N_max: float = math.inf
    eta: float = 1.0
    q: float = 0.0
    alpha: float = 0.0
    s: float = 0.5
    truncation_radius: int | None = None
    flow_tol: float = 1e-10
    divisor_floor: float = 1e-12
    ledger_max_degree: int | None = None
    certify: bool = True

    def __post_init__(self):
        if self.p < 3:
            raise InvalidInput("p must be >= 3")
        if self.r < self.p:
            raise InvalidInput("r must be >= p")
        if self.N > self.N_max:
            raise InvalidInput("N must not exceed N_max")
        if not self.eta > 0:
            raise InvalidInput("eta must be positive")

    @property
    def steps(self) -> list[int]:
        return list(range(self.p, self.r)) or [self.p]

    @property
    def top(self) -> int:
        """Degrees >= top are remainder terms."""
        return max(self.r, self.p + 1)

    @property
    def ledger_max(self) -> int:
        return self.ledger_max_degree if self.ledger_max_degree is not None else self.top


# ---------------------------------------------------------------------------
# elementary steps


def split_resonant(Q: PolyHamiltonian, omega: FrequencyFamily, N: float) -> tuple[PolyHamiltonian, PolyHamiltonian]:
    """L: keys with kappa <= N; U: the rest (paired keys included)."""
    low = Q.select(lambda rows: kappa_rows(omega, rows) <= N)
    high = Q.select(lambda rows: ~(kappa_rows(omega, rows) <= N))
    return low, high


def solve_homological(L: PolyHamiltonian, Z2: QuadraticDiagonal, gamma_floor: float = 0.0
                      ) -> tuple[PolyHamiltonian, float]:
    """chi with {chi, Z2} + L = 0, and the smallest |sigma . omega| met."""
    worst = [math.inf]

    def divide(rows, c):
        div = Z2.divisors(rows)
        a = np.abs(div)
        if a.size:
            i = int(np.argmin(a))
            worst[0] = min(worst[0], float(a[i]))
            if a[i] < gamma_floor or a[i] == 0:
                idx = L.lattice.indices
                key = [[*idx[s >> 1], int(2 * (s & 1) - 1)] for s in rows[i]]
                raise ResonanceViolation(f"small divisor {div[i]:.3e} below floor", {"key": key,
                                                                                     "divisor": float(div[i])})
        return c / (2j * Z2.scale * div)

    chi = L.map_blocks(divide)
    return chi, worst[0]


def homological_residual(chi: PolyHamiltonian, L: PolyHamiltonian, Z2: QuadraticDiagonal) -> float:
    """max |{chi, Z2} + L| / max |L| over keys (0 when L = 0)."""
    ref = max((float(np.max(np.abs(b.coefs))) for b in L.blocks.values()), default=0.0)
    res = poisson_with_Z2(chi, Z2) + L
    err = max((float(np.max(np.abs(b.coefs))) for b in res.blocks.values()), default=0.0)
    return err / ref if ref > 0 else err


def lie_expand(Z2: QuadraticDiagonal, Qs: dict, chi: PolyHamiltonian, L: PolyHamiltonian, r: int,
               ledger_max: int | None = None) -> tuple[dict, dict]:
    """Transform Z2 + sum Qs by the time-one flow of chi (homogeneous of degree r_star).

    Returns new Qs (degrees < r) and the tail ledger (degrees r..ledger_max).
    """
    ledger_max = r if ledger_max is None else ledger_max
    lat = Z2.lattice
    if chi.is_zero():
        return {j: q for j, q in Qs.items() if not q.is_zero()}, {}
    (rs,) = chi.degrees
    new: dict = {}
    tail: dict = {}

    def put(deg, H):
        if H.is_zero():
            return
        bucket = new if deg < r else tail
        bucket[deg] = bucket[deg] + H if deg in bucket else H

    for j, Q in Qs.items():
        put(j, Q - L if j == rs else Q)
        term, k = Q, 0
        while True:
            k += 1
            deg = j + k * (rs - 2)
            if deg > ledger_max or term.is_zero():
                break
            term = poisson_bracket(chi, term).scaled(1.0 / k)
            put(deg, term)
    term, k = L, 0
    while True:
        k += 1
        deg = rs + k * (rs - 2)
        if deg > ledger_max:
            break
        term = poisson_bracket(chi, term)  # ad^k L
        put(deg, term.scaled(-1.0 / math.factorial(k + 1)))
    return new, tail


def commutes_with_superactions(Q: PolyHamiltonian, omega: FrequencyFamily, N: float) -> bool:
    """{J_n, Q} = 0 coefficient-exactly for every group whose representative has <n> <= N."""
    br = omega.lattice.brackets()
    for g in range(omega.n_groups):
        members = np.nonzero(omega.group_id == g)[0]
        if br[members].min() > N:
            continue
        J = group_indicator(omega, omega.lattice.indices[members[0]])
        if not poisson_with_Z2(Q, J).is_zero():
            return False
    return True


def _sum(H: dict, lattice: Lattice) -> PolyHamiltonian:
    out = PolyHamiltonian.zero(lattice)
    for q in H.values():
        out = out + q
    return out


def gradient_constant(chi: PolyHamiltonian, s: float) -> float:
    """M with ||grad chi(u)||_{h^s} <= M ||u||_{h^s}^{r-1} (from |u_n| <= <n>^-s ||u||)."""
    br = chi.lattice.brackets()
    total = 0.0
    for b in chi.blocks.values():
        table = _derivative_table(b)
        G = np.zeros(chi.lattice.size)
        for slot, (rows, w) in table.items():
            if slot & 1:
                continue
            G[slot >> 1] += float(np.sum(np.abs(w) * np.prod(br[rows >> 1] ** (-s), axis=1)))
        total += 2.0 * math.sqrt(float(np.sum(br ** (2 * s) * G * G)))
    return total


# ---------------------------------------------------------------------------
# composed maps


@dataclass(frozen=True)
class FlowMap:
    """Composition of time-t flows; segments are applied left to right."""

    segments: tuple
    tol: float = 1e-10

    def apply(self, u: State, differential: bool = False) -> tuple[State, np.ndarray | None]:
        w, _, D = self.apply_delta(u, differential)
        return w, (None if D is None else np.eye(D.shape[0]) + D)

    def apply_delta(self, u: State, differential: bool = False):
        """(image, total displacement, Jacobian minus identity)."""
        n = 2 * u.lattice.size
        D = np.zeros((n, n)) if differential else None
        disp = np.zeros(u.lattice.size, dtype=complex)
        for chi, t in self.segments:
            fr = flow(chi, u, t, self.tol, differential=differential)
            u = fr.state
            disp = disp + fr.displacement
            if differential:
                D = fr.jacobian_delta + D + fr.jacobian_delta @ D
        return u, disp, D

    def __call__(self, u: State) -> State:
        return self.apply(u)[0]

    def manifest(self) -> list:
        return [{"degree": chi.degrees[0] if chi.degrees else None, "t": t, "nnz": chi.nnz}
                for chi, t in self.segments]


@dataclass
class NormalFormOutput:
    config: NormalFormConfig
    Z2: QuadraticDiagonal
    P: PolyHamiltonian
    generators: list
    Qs: dict
    Q_res: PolyHamiltonian
    tail: dict
    tau0: FlowMap
    tau1: FlowMap
    epsilon0: float
    certificate: dict = field(default_factory=dict)

    @property
    def lattice(self) -> Lattice:
        return self.Z2.lattice

    def hamiltonian(self, u) -> float:
        return self.Z2.evaluate(u) + evaluate(self.P, u)

    def remainder(self, v: State) -> float:
        """R(v) = (Z2 + P)(tau1 v) - Z2(v) - Q_res(v)."""
        w, d, _ = self.tau1.apply_delta(v)
        # Z2(v + d) - Z2(v) expanded to avoid cancellation
        dZ = float(self.Z2.scale * np.sum(self.Z2.omega.omega * (2 * np.real(np.conj(v.values) * d) + np.abs(d) ** 2)))
        return dZ + evaluate(self.P, w) - evaluate(self.Q_res, v)

    def remainder_gradient(self, v: State) -> np.ndarray:
        """grad R(v) through the chained variational equation."""
        w, d, D = self.tau1.apply_delta(v, differential=True)
        gH = self.Z2.gradient(w.values) + gradient(self.P, w.values)
        # J^T grad H(w) - grad Z2(v) with J = I + D, grouped to avoid cancellation
        g = self.Z2.gradient(d) + gradient(self.P, w.values) + _cplx(D.T @ _real(gH))
        return g - gradient(self.Q_res, v.values)

    def tail_value(self, v: State) -> float:
        return sum(evaluate(h, v) for h in self.tail.values())

    def to_directory(self, path: str):
        os.makedirs(path, exist_ok=True)
        with open(os.path.join(path, "Q_res.json"), "w") as fh:
            fh.write(self.Q_res.to_json())
        for rs, chi in self.generators:
            with open(os.path.join(path, f"chi_{rs}.json"), "w") as fh:
                fh.write(chi.to_json())
        with open(os.path.join(path, "certificate.json"), "w") as fh:
            json.dump(_jsonable(self.certificate), fh, sort_keys=True, indent=1)
        with open(os.path.join(path, "tau.json"), "w") as fh:
            json.dump({"tau0": self.tau0.manifest(), "tau1": self.tau1.manifest()}, fh, sort_keys=True, indent=1)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def _epsilon0(M: dict) -> float:
    """Largest eps with sum_r 3^(r-1) M_r eps^(r-2) <= 1/2."""
    if not any(m > 0 for m in M.values()):
        return math.inf

    def f(e):
        return sum(3 ** (rs - 1) * m * e ** (rs - 2) for rs, m in M.items())

    lo, hi = 0.0, 1.0
    while f(hi) <= 0.5:
        hi *= 2
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if f(mid) <= 0.5 else (lo, mid)
    return lo


def birkhoff_normal_form(Z2: QuadraticDiagonal, P: PolyHamiltonian, config: NormalFormConfig) -> NormalFormOutput:
    cfg = config
    lat = Z2.lattice
    omega = Z2.omega
    if P.lattice != lat:
        raise InvalidInput("P and Z2 live on different lattices")
    if P.degrees and min(P.degrees) < cfg.p:
        raise InvalidInput("P has terms of degree below p")
    Qs = {j: P.homogeneous(j) for j in P.degrees if j < cfg.top}
    tail = {j: P.homogeneous(j) for j in P.degrees if cfg.top <= j <= cfg.ledger_max}
    cert: dict = {"steps": [], "P_scaling": {j: _norm(P.homogeneous(j), cfg) * cfg.eta ** (j - 2) for j in P.degrees}}
    nr = None
    if cfg.certify:
        radius = cfg.truncation_radius if cfg.truncation_radius is not None else lat.radius
        nr = verify_strong_nonresonance(omega, max(cfg.steps), cfg.N, radius)
        cert["nonresonance"] = {str(k): {"gamma": v.gamma, "beta": v.beta, "min_divisor": v.min_divisor}
                                for k, v in nr.per_order.items()}
        if not nr.valid:
            raise ResonanceViolation("frequencies are resonant at the required orders", nr.violations[0])
    gens = []
    M = {}
    b2 = {j: 0.0 for j in range(cfg.p, cfg.ledger_max + 1)}
    b = 0.0
    min_div = math.inf
    for rs in cfg.steps:
        Q = Qs.get(rs, PolyHamiltonian.zero(lat))
        L, U = split_resonant(Q, omega, cfg.N)
        chi, md = solve_homological(L, Z2, cfg.divisor_floor)
        min_div = min(min_div, md)
        step = {"r_star": rs, "n_L": L.nnz, "n_U": U.nnz, "min_divisor": md,
                "chi_norm": _norm(chi, cfg), "L_norm": _norm(L, cfg)}
        # homological identity, coefficient-exact
        res = homological_residual(chi, L, Z2)
        step["homological_residual"] = res
        step["homological_exact"] = res <= 4 * np.finfo(float).eps
        if nr is not None and rs in nr.per_order and math.isfinite(md):
            st = nr.per_order[rs]
            thr = st.gamma * cfg.N ** (-st.beta)
            step["divisor_threshold"] = thr
            step["divisor_above_threshold"] = md >= thr * (1 - 1e-12)
            beta_rs = st.beta
        else:
            beta_rs = 0.0
        e_chi = beta_rs + b2.get(rs, 0.0) * (rs - 2)
        if not chi.is_zero():
            b = max(b, e_chi / (rs - 2))
            for j in list(Qs):
                for k in range(1, cfg.ledger_max):
                    deg = j + k * (rs - 2)
                    if deg > cfg.ledger_max:
                        break
                    b2[deg] = max(b2.get(deg, 0.0), (b2.get(j, 0.0) * (j - 2) + k * e_chi) / (deg - 2))
        Qs, new_tail = lie_expand(Z2, Qs, chi, L, cfg.top, cfg.ledger_max)
        for deg, h in new_tail.items():
            tail[deg] = tail[deg] + h if deg in tail else h
        step["Q_norms"] = {j: _norm(q, cfg) for j, q in sorted(Qs.items())}
        step["dropped_mass"] = float(sum(q.dropped_mass for q in Qs.values()))
        cert["steps"].append(step)
        if not chi.is_zero():
            gens.append((rs, chi))
            M[rs] = gradient_constant(chi, cfg.s)
    Q_res = _sum(Qs, lat)
    eps0 = _epsilon0(M)
    cert.update({"min_divisor": min_div, "b": b, "gradient_constants": M, "epsilon0": eps0,
                 "C": (cfg.eta / (eps0 * cfg.N ** b)) if math.isfinite(eps0) and eps0 > 0 else math.nan,
                 "Q_res_kappa_above_N": bool(np.all([np.all(kappa_rows(omega, blk.rows) > cfg.N)
                                                     for blk in Q_res.blocks.values()])),
                 "Q_res_commutes": commutes_with_superactions(Q_res, omega, cfg.N)})
    tau1 = FlowMap(tuple((chi, 1.0) for _, chi in reversed(gens)), cfg.flow_tol)
    tau0 = FlowMap(tuple((chi, -1.0) for _, chi in gens), cfg.flow_tol)
    return NormalFormOutput(cfg, Z2, P, gens, Qs, Q_res, tail, tau0, tau1, eps0, cert)


def _norm(H: PolyHamiltonian, cfg: NormalFormConfig) -> float:
    from .hamilton import norm_q_alpha
    return norm_q_alpha(H, cfg.q, cfg.alpha) if not H.is_zero() else 0.0


# ---------------------------------------------------------------------------
# verification


def _sample(lattice: Lattice, radius: float, s: float, rng) -> State:
    return random_state(lattice, radius, s, rng)


def verify_conjugacy(out: NormalFormOutput, samples: int = 20, radius: float | None = None, seed: int = 0,
                     differentials: bool = True) -> dict:
    """Round trip, closeness, conjugacy identity and differential bounds on sampled states."""
    cfg = out.config
    lat = out.lattice
    s = cfg.s
    eps0 = out.epsilon0
    radius = 0.5 * eps0 if radius is None else radius
    rng = np.random.default_rng(seed)
    rows = []
    for _ in range(samples):
        u = _sample(lat, radius, s, rng)
        v, J0 = out.tau0.apply(u, differential=differentials)
        w, J1 = out.tau1.apply(v, differential=differentials)
        H_u = out.hamiltonian(u)
        R_v = out.remainder(v)
        conj = abs(H_u - (out.Z2.evaluate(v) + evaluate(out.Q_res, v) + R_v)) / max(abs(H_u), 1e-300)
        nu = hs_norm(u, s)
        bound = (nu / eps0) ** (cfg.p - 2) * nu if math.isfinite(eps0) else 0.0
        row = {"norm": nu,
               "roundtrip": hs_norm(State(lat, w.values - u.values), s),
               "closeness_tau0": hs_norm(State(lat, v.values - u.values), s),
               "closeness_tau1": hs_norm(State(lat, out.tau1(u).values - u.values), s),
               "closeness_bound": bound,
               "conjugacy_residual": conj,
               "tail_mismatch": abs(R_v - out.tail_value(v)) / max(abs(R_v), 1e-300) if R_v != 0 else 0.0,
               "remainder": R_v}
        if differentials:
            row["dtau0_hs"] = operator_norm(J0, lat, s)
            row["dtau0_h-s"] = operator_norm(J0, lat, -s)
            _, Jt = out.tau1.apply(u, differential=True)
            row["dtau1_hs"] = operator_norm(Jt, lat, s)
            row["dtau1_h-s"] = operator_norm(Jt, lat, -s)
        rows.append(row)
    dbound = 2.0 ** (cfg.r - cfg.p)
    rt_tol = 10 * cfg.flow_tol * max(1.0, len(out.generators)) * max(radius, 1e-300)
    rep = {
        "radius": radius,
        "samples": rows,
        "max_roundtrip": max(r["roundtrip"] for r in rows) if rows else 0.0,
        "max_conjugacy_residual": max(r["conjugacy_residual"] for r in rows) if rows else 0.0,
        "closeness_ok": all(max(r["closeness_tau0"], r["closeness_tau1"]) <= r["closeness_bound"] + 1e-15
                            for r in rows),
        "roundtrip_tolerance": rt_tol,
    }
    rep["roundtrip_ok"] = rep["max_roundtrip"] <= rt_tol
    if differentials:
        keys = ("dtau0_hs", "dtau0_h-s", "dtau1_hs", "dtau1_h-s")
        rep["max_dtau"] = max(max(r[k] for k in keys) for r in rows) if rows else 1.0
        rep["dtau_bound"] = dbound
        rep["dtau_ok"] = rep["max_dtau"] <= dbound
    return rep


def _fd_gradient(out: NormalFormOutput, v: State, h: float) -> np.ndarray:
    x = _real(v.values)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (out.remainder(State(v.lattice, _cplx(x + e))) - out.remainder(State(v.lattice, _cplx(x - e)))) / (2 * h)
    return _cplx(g)


def remainder_scaling(out: NormalFormOutput, radii, samples: int = 4, seed: int = 0,
                      method: str = "variational") -> dict:
    """Fit log ||grad R||_{h^s} against log radius."""
    cfg = out.config
    rng = np.random.default_rng(seed)
    lat = out.lattice
    dirs = [_sample(lat, 1.0, cfg.s, rng) for _ in range(samples)]
    table = []
    for rho in radii:
        vals = []
        for e in dirs:
            v = State(lat, rho * e.values)
            if method == "variational":
                g = out.remainder_gradient(v)
            else:
                g = _fd_gradient(out, v, 1e-2 * rho)
            vals.append(hs_norm(g, cfg.s, lat))
        table.append({"radius": float(rho), "grad_norm": float(np.max(vals)), "samples": [float(x) for x in vals]})
    g = np.array([t["grad_norm"] for t in table])
    if np.all(g == 0):
        return {"slope": None, "exact_zero": True, "table": table, "target": cfg.top - 1}
    if len(table) < 2:
        return {"slope": None, "exact_zero": False, "table": table, "target": cfg.top - 1}
    x = np.log([t["radius"] for t in table])
    slope, icpt = np.polyfit(x, np.log(g), 1)
    return {"slope": float(slope), "intercept": float(icpt), "exact_zero": False, "table": table,
            "target": cfg.top - 1}
