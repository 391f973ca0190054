"""Truncated PDE models, Strang splitting, super-action tracking and scaling experiments."""
from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .hamilton import PolyHamiltonian, QuadraticDiagonal, super_action
from .lattice import InvalidInput, Lattice, State, hs_norm, random_state
from .resonance import combinations_with_replacement
from .spectra import (FrequencyFamily, PeriodicEvenSystem, Potential, dirichlet_spectrum, kg_frequencies,
                      neumann_spectrum, nls2_frequencies)

KINDS = ("KG1D", "NLS1D_Dir", "NLS1D_Per", "NLS2D_Conv")


class IntegrationAbort(RuntimeError):
    def __init__(self, message: str, trace: "Trace"):
        super().__init__(message)
        self.trace = trace


# ---------------------------------------------------------------------------
# nonlinearity ladders


@dataclass(frozen=True)
class Nonlinearity:
    """g(x, y) = sum_j g_j(x) y^j / j!; each g_j is a constant or a callable of x."""

    ladder: tuple = ()

    @classmethod
    def power(cls, c: float, j: int) -> "Nonlinearity":
        """g(x, y) = c y^j."""
        lad = [0.0] * (j + 1)
        lad[j] = c * math.factorial(j)
        return cls(tuple(lad))

    @classmethod
    def zero(cls) -> "Nonlinearity":
        return cls(())

    def coeff(self, j: int, x: np.ndarray) -> np.ndarray:
        if j >= len(self.ladder):
            return np.zeros_like(x, dtype=float)
        c = self.ladder[j]
        return np.asarray(c(x), dtype=float) if callable(c) else np.full_like(x, float(c), dtype=float)

    @property
    def is_zero(self) -> bool:
        return all((not callable(c)) and c == 0 for c in self.ladder)

    @property
    def order(self) -> int | None:
        """Lowest j with g_j != 0."""
        for j, c in enumerate(self.ladder):
            if callable(c) or c != 0:
                return j
        return None

    def value(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        out = np.zeros(np.broadcast(x, y).shape, dtype=np.result_type(y, float))
        for j in range(len(self.ladder)):
            out = out + self.coeff(j, x) * y ** j / math.factorial(j)
        return out

    def primitive(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """G(x, y) = int_0^y g(x, z) dz."""
        out = np.zeros(np.broadcast(x, y).shape, dtype=np.result_type(y, float))
        for j in range(len(self.ladder)):
            out = out + self.coeff(j, x) * y ** (j + 1) / math.factorial(j + 1)
        return out

    def to_dict(self) -> dict:
        if any(callable(c) for c in self.ladder):
            return {"ladder": "callable"}
        return {"ladder": [float(c) for c in self.ladder]}


# ---------------------------------------------------------------------------
# model specification


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    K: int
    mass: float = 1.0
    potential: Potential | None = None
    vhat: dict | None = None
    g: Nonlinearity = field(default_factory=lambda: Nonlinearity.power(1.0, 2))
    oversample: int = 2
    s: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInput(f"unknown model kind {self.kind!r}")
        if self.K < 1:
            raise InvalidInput("truncation radius must be >= 1")
        if self.kind == "KG1D" and self.mass <= -1:
            raise InvalidInput("Klein-Gordon mass must satisfy m > -1")
        if self.kind == "NLS1D_Per" and self.potential is not None and not self.potential.is_even:
            raise InvalidInput("periodic NLS requires an even potential")
        if self.kind == "NLS2D_Conv" and self.vhat:
            for v in self.vhat.values():
                if np.iscomplexobj(v) and np.imag(v) != 0:
                    raise InvalidInput("convolution potential must have real Fourier coefficients")

    @property
    def sobolev(self) -> float:
        if self.s is not None:
            return self.s
        return 0.5 if self.kind == "KG1D" else 1.0

    @property
    def p(self) -> int | None:
        o = self.g.order
        if o is None:
            return None
        return o + 1 if self.kind == "KG1D" else 2 * (o + 1)

    def describe(self) -> dict:
        d = {"kind": self.kind, "K": self.K, "mass": self.mass, "oversample": self.oversample,
             "s": self.sobolev, "g": self.g.to_dict()}
        if self.potential is not None:
            d["potential"] = json.loads(self.potential.to_json())
        if self.vhat is not None:
            d["vhat"] = [[list(k), float(v)] for k, v in sorted(self.vhat.items())]
        return d


# ---------------------------------------------------------------------------
# systems


class _System:
    lattice: Lattice
    omega: FrequencyFamily
    s: float

    def phase(self, u: np.ndarray, t: float) -> np.ndarray:
        return u * np.exp(-1j * self.omega.omega * t)

    def mass(self, u: np.ndarray) -> float:
        return float(np.sum(np.abs(u) ** 2))

    def quadratic(self, u: np.ndarray) -> float:
        return float(0.5 * np.sum(self.omega.omega * np.abs(u) ** 2))


class KGSystem(_System):
    """Complexified Klein-Gordon on the sine grid x_j = j pi/(M+1)."""

    def __init__(self, model: ModelSpec):
        self.model = model
        K = model.K
        self.omega = kg_frequencies(model.mass, K)
        self.lattice = self.omega.lattice
        self.s = model.sobolev
        self.M = model.oversample * (K + 1) - 1
        self.h = math.pi / (self.M + 1)
        self.x = np.arange(1, self.M + 1) * self.h
        k = np.arange(1, K + 1)
        self.E = math.sqrt(2 / math.pi) * np.sin(np.outer(k, self.x))  # (K, M)
        self.a = self.omega.omega ** -0.5
        self.g = model.g

    def field(self, u: np.ndarray) -> np.ndarray:
        return (self.a * u.real) @ self.E

    def kick(self, u: np.ndarray, dt: float) -> np.ndarray:
        if self.g.is_zero:
            return u
        G = self.h * (self.E @ self.g.value(self.x, self.field(u)))
        return u + 1j * dt * self.a * G

    def potential_energy(self, u: np.ndarray) -> float:
        return float(-self.h * np.sum(self.g.primitive(self.x, self.field(u))))

    def hamiltonian(self, u: np.ndarray) -> float:
        return self.quadratic(u) + self.potential_energy(u)

    def gradient(self, u: np.ndarray) -> np.ndarray:
        G = self.h * (self.E @ self.g.value(self.x, self.field(u)))
        return self.omega.omega * u - self.a * G

    def forcing(self, u: np.ndarray) -> float:
        """h^{-s} norm of the nonlinear forcing on modes K < k <= 2K (finer grid)."""
        K = self.model.K
        M2 = 4 * (K + 1) * max(self.model.oversample, 2) - 1
        h2 = math.pi / (M2 + 1)
        x2 = np.arange(1, M2 + 1) * h2
        kk = np.arange(1, K + 1)
        phi = (self.a * u.real) @ (math.sqrt(2 / math.pi) * np.sin(np.outer(kk, x2)))
        ko = np.arange(K + 1, 2 * K + 1)
        G = h2 * (math.sqrt(2 / math.pi) * np.sin(np.outer(ko, x2))) @ self.g.value(x2, phi)
        ao = (ko.astype(float) ** 2 + self.model.mass) ** -0.25
        return float(np.sqrt(np.sum((1 + ko.astype(float) ** 2) ** (-self.s) * (ao * G) ** 2)))

    def energies(self, u: np.ndarray) -> np.ndarray:
        return 0.5 * math.pi * np.abs(u) ** 2


class GridNLSSystem(_System):
    """NLS in a Sturm-Liouville eigenbasis with K-point collocation.

    Q maps eigen-coefficients to grid values and satisfies w_quad * Q^T Q = I.
    """

    def __init__(self, model: ModelSpec, omega: FrequencyFamily, Q: np.ndarray, x: np.ndarray, wq: float):
        self.model = model
        self.omega = omega
        self.lattice = omega.lattice
        self.s = model.sobolev
        self.Q = Q
        self.x = x
        self.wq = wq
        self.g = model.g

    def to_grid(self, w: np.ndarray) -> np.ndarray:
        return self.Q @ w

    def from_grid(self, U: np.ndarray) -> np.ndarray:
        return self.wq * (self.Q.T @ U)

    def kick(self, w: np.ndarray, dt: float) -> np.ndarray:
        if self.g.is_zero:
            return w
        U = self.to_grid(w)
        U = U * np.exp(-1j * dt * self.g.value(self.x, np.abs(U) ** 2))
        return self.from_grid(U)

    def hamiltonian(self, w: np.ndarray) -> float:
        U = self.to_grid(w)
        return self.quadratic(w) + float(0.5 * self.wq * np.sum(self.g.primitive(self.x, np.abs(U) ** 2)))

    def gradient(self, w: np.ndarray) -> np.ndarray:
        U = self.to_grid(w)
        return self.omega.omega * w + self.from_grid(self.g.value(self.x, np.abs(U) ** 2) * U)

    def forcing(self, w: np.ndarray) -> float:
        return float("nan")


def _nls_dirichlet(model: ModelSpec) -> GridNLSSystem:
    K = model.K
    V = model.potential or Potential.zero()
    E = dirichlet_spectrum(V, max(1, K // 4), galerkin_dim=K)
    lat = Lattice.interval(1, K)
    omega = FrequencyFamily(lat, E.eigenvalues_all[:K])
    h = math.pi / (K + 1)
    x = np.arange(1, K + 1) * h
    S = math.sqrt(2 / math.pi) * np.sin(np.outer(x, np.arange(1, K + 1)))  # (grid, sine mode)
    Q = S @ E.coeffs.T  # eigen-coefficients -> grid
    sysm = GridNLSSystem(model, omega, Q, x, h)
    sysm.eigensystem = E
    return sysm


def _nls_periodic(model: ModelSpec) -> GridNLSSystem:
    K = model.K
    V = model.potential or Potential.zero()
    nm = max(1, K // 4)
    Ed = dirichlet_spectrum(V, nm, galerkin_dim=K)
    En = neumann_spectrum(V, nm, galerkin_dim=K + 1)
    lat = Lattice.interval(-K, K)
    lam = np.array([Ed.eigenvalues_all[n - 1] if n > 0 else En.eigenvalues_all[-n] for (n,) in lat.indices])
    omega = FrequencyFamily(lat, lam)
    M = 2 * K + 1
    x = 2 * math.pi * np.arange(M) / M
    Q = np.zeros((M, M))
    ks = np.arange(K + 1)
    cosb = np.cos(np.outer(x, ks)) / math.sqrt(math.pi)
    cosb[:, 0] = 1 / math.sqrt(2 * math.pi)
    sinb = np.sin(np.outer(x, np.arange(1, K + 1))) / math.sqrt(math.pi)
    for i, (n,) in enumerate(lat.indices):
        if n > 0:
            Q[:, i] = sinb @ Ed.coeffs[n - 1]
        else:
            Q[:, i] = cosb @ En.coeffs[-n]
    sysm = GridNLSSystem(model, omega, Q, x, 2 * math.pi / M)
    sysm.eigensystem = PeriodicEvenSystem(Ed, En)
    return sysm


class NLS2DSystem(_System):
    """Cubic NLS with convolution potential on T^2, collocation on (2K+1)^2 points."""

    def __init__(self, model: ModelSpec):
        self.model = model
        K = model.K
        vh = model.vhat or {}
        self.omega = nls2_frequencies(lambda n: float(np.real(vh.get(tuple(n), 0.0))), K)
        self.lattice = self.omega.lattice
        self.s = model.sobolev
        self.M = 2 * K + 1
        c = self.lattice.coords()
        self.ix = (c[:, 0] % self.M, c[:, 1] % self.M)
        self.g = model.g
        self.wq = (2 * math.pi / self.M) ** 2

    def to_grid(self, u: np.ndarray) -> np.ndarray:
        A = np.zeros((self.M, self.M), dtype=complex)
        A[self.ix] = u
        return (self.M ** 2 / (2 * math.pi)) * np.fft.ifft2(A)

    def from_grid(self, U: np.ndarray) -> np.ndarray:
        return (2 * math.pi / self.M ** 2) * np.fft.fft2(U)[self.ix]

    def kick(self, u: np.ndarray, dt: float) -> np.ndarray:
        if self.g.is_zero:
            return u
        U = self.to_grid(u)
        U = U * np.exp(-1j * dt * self.g.value(0.0, np.abs(U) ** 2))
        return self.from_grid(U)

    def hamiltonian(self, u: np.ndarray) -> float:
        U = self.to_grid(u)
        return self.quadratic(u) + float(0.5 * self.wq * np.sum(self.g.primitive(0.0, np.abs(U) ** 2)))

    def gradient(self, u: np.ndarray) -> np.ndarray:
        U = self.to_grid(u)
        return self.omega.omega * u + self.from_grid(self.g.value(0.0, np.abs(U) ** 2) * U)

    def forcing(self, u: np.ndarray) -> float:
        """h^{-s} norm of the cubic term on modes outside the radius, from a doubled grid."""
        K = self.model.K
        M2 = 2 * self.M
        c = self.lattice.coords()
        A = np.zeros((M2, M2), dtype=complex)
        A[c[:, 0] % M2, c[:, 1] % M2] = u
        U = (M2 ** 2 / (2 * math.pi)) * np.fft.ifft2(A)
        F = (2 * math.pi / M2 ** 2) * np.fft.fft2(self.g.value(0.0, np.abs(U) ** 2) * U)
        k = np.fft.fftfreq(M2, 1.0 / M2)
        k1, k2 = np.meshgrid(k, k, indexing="ij")
        outside = np.maximum(np.abs(k1), np.abs(k2)) > K
        w = (1 + k1 ** 2 + k2 ** 2) ** (-self.s)
        return float(np.sqrt(np.sum(w[outside] * np.abs(F[outside]) ** 2)))


def make_system(model: ModelSpec) -> _System:
    if model.kind == "KG1D":
        return KGSystem(model)
    if model.kind == "NLS1D_Dir":
        return _nls_dirichlet(model)
    if model.kind == "NLS1D_Per":
        return _nls_periodic(model)
    return NLS2DSystem(model)


# ---------------------------------------------------------------------------
# KG complexification and symbolic nonlinearity


def kg_complexify(Phi: State, Psi: State, m: float) -> State:
    """u_n = (n^2+m)^{1/4} Phi_n + i (n^2+m)^{-1/4} Psi_n (orthonormal sine coefficients)."""
    if m <= -1:
        raise InvalidInput("Klein-Gordon mass must satisfy m > -1")
    n = Phi.lattice.coords()[:, 0].astype(float)
    w = np.sqrt(n * n + m)
    return State(Phi.lattice, w ** 0.5 * Phi.values.real + 1j * w ** -0.5 * Psi.values.real)


def kg_decomplexify(u: State, m: float) -> tuple[State, State]:
    if m <= -1:
        raise InvalidInput("Klein-Gordon mass must satisfy m > -1")
    n = u.lattice.coords()[:, 0].astype(float)
    w = np.sqrt(n * n + m)
    return State(u.lattice, w ** -0.5 * u.values.real), State(u.lattice, w ** 0.5 * u.values.imag)


def harmonic_energy(Phi: State, Psi: State, m: float, n: int) -> float:
    """sqrt(n^2+m) (int sin(n x) Phi)^2 + (n^2+m)^{-1/2} (int sin(n x) Psi)^2."""
    w = math.sqrt(n * n + m)
    c = math.sqrt(math.pi / 2)  # int sin(n x) f = sqrt(pi/2) * orthonormal coefficient
    return w * (c * Phi[n].real) ** 2 + (c * Psi[n].real) ** 2 / w


def kg_polynomial(model: ModelSpec, degrees: Sequence[int]) -> PolyHamiltonian:
    """Symbolic P^{(J)}(u) = -(h/J!) sum_x g_{J-1}(x) Phi(x)^J on the model's grid."""
    sysm = KGSystem(model)
    K = model.K
    A = sysm.a[:, None] * sysm.E  # (K, M)
    data = {}
    for J in degrees:
        gJ = sysm.g.coeff(J - 1, sysm.x)
        if not np.any(gJ):
            continue
        pref = -sysm.h / (math.factorial(J) * 2 ** J)
        rows_all, coefs_all = [], []
        for combo in combinations_with_replacement(2 * K, J):
            pos = combo >> 1
            prod = np.ones((combo.shape[0], sysm.M)) * gJ
            for c in range(J):
                prod = prod * A[pos[:, c]]
            coefs = pref * prod.sum(axis=1)
            keep = np.abs(coefs) > 1e-15 * max(1.0, np.abs(coefs).max())
            rows_all.append(combo[keep])
            coefs_all.append(coefs[keep].astype(complex))
        data[J] = (np.concatenate(rows_all), np.concatenate(coefs_all))
    return PolyHamiltonian.from_arrays(sysm.lattice, data)


# ---------------------------------------------------------------------------
# traces


@dataclass
class Trace:
    times: list = field(default_factory=list)
    norms: list = field(default_factory=list)
    H: list = field(default_factory=list)
    M: list = field(default_factory=list)
    J: list = field(default_factory=list)
    E: list = field(default_factory=list)
    amplitudes: list = field(default_factory=list)
    F: list = field(default_factory=list)
    groups: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    final: np.ndarray | None = None

    def append(self, t, sysm, u, groups_pos, track_forcing):
        self.times.append(float(t))
        self.norms.append(hs_norm(u, sysm.s, sysm.lattice))
        self.H.append(sysm.hamiltonian(u))
        self.M.append(sysm.mass(u))
        a2 = np.abs(u) ** 2
        self.J.append([float(a2[p].sum()) for p in groups_pos])
        if isinstance(sysm, KGSystem):
            self.E.append(sysm.energies(u).tolist())
        self.amplitudes.append(np.sqrt(a2).tolist())
        self.F.append(sysm.forcing(u) if track_forcing else float("nan"))

    def array(self, name: str) -> np.ndarray:
        return np.asarray(getattr(self, name), dtype=float)

    def columns(self) -> list[str]:
        cols = ["t", "norm", "H", "M"] + [f"J_{_label(g)}" for g in self.groups]
        if self.E:
            cols += [f"E_{k + 1}" for k in range(len(self.E[0]))]
        return cols + ["F"]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(self.columns()) + "\n")
        for i, t in enumerate(self.times):
            row = [t, self.norms[i], self.H[i], self.M[i], *self.J[i]]
            if self.E:
                row += self.E[i]
            row.append(self.F[i])
            buf.write(",".join(f"{float(v):.17g}" for v in row) + "\n")
        return buf.getvalue()

    def summary(self) -> dict:
        H = self.array("H")
        M = self.array("M")
        J = self.array("J")
        out = {"meta": self.meta, "samples": len(self.times), "T": self.times[-1] if self.times else 0.0,
               "H_drift": float(np.max(np.abs(H - H[0]))) if H.size else 0.0,
               "M_drift_rel": float(np.max(np.abs(M - M[0])) / max(M[0], 1e-300)) if M.size else 0.0,
               "J_drift": {_label(g): float(np.max(np.abs(J[:, i] - J[0, i]))) for i, g in enumerate(self.groups)}
               if J.size else {}}
        F = self.array("F")
        if F.size and np.any(np.isfinite(F)):
            out["F_max"] = float(np.nanmax(F))
        return out


def _label(g) -> str:
    return "x".join(str(c) for c in g) if isinstance(g, tuple) else str(g)


def _group_positions(sysm: _System, groups) -> tuple[list, list]:
    if groups is None:
        reps = []
        seen = set()
        for i, n in enumerate(sysm.lattice.indices):
            gid = int(sysm.omega.group_id[i])
            if gid not in seen:
                seen.add(gid)
                reps.append(n)
        groups = reps
    pos = [sysm.omega.group_members(n) for n in groups]
    return [tuple(n) if not isinstance(n, (int, np.integer)) else (int(n),) for n in groups], pos


def integrate(model: ModelSpec | _System, u0: State, T: float, dt: float, samples: int = 200,
              groups=None, track_forcing: bool = False, abort_factor: float = 10.0) -> Trace:
    """Strang splitting: half linear phase, nonlinear kick, half linear phase."""
    sysm = model if isinstance(model, _System) else make_system(model)
    if u0.lattice != sysm.lattice:
        raise InvalidInput("initial state does not live on the model lattice")
    steps = int(round(abs(T / dt)))
    stride = max(1, steps // max(1, samples))
    groups, gpos = _group_positions(sysm, groups)
    tr = Trace(groups=groups, meta={"dt": dt, "T": steps * dt, "steps": steps, "stride": stride})
    u = u0.values.copy()
    n0 = hs_norm(u, sysm.s, sysm.lattice)
    tr.append(0.0, sysm, u, gpos, track_forcing)
    half = 0.5 * dt
    ph = np.exp(-1j * sysm.omega.omega * half)
    for k in range(1, steps + 1):
        u = ph * u
        u = sysm.kick(u, dt)
        u = ph * u
        if k % stride == 0 or k == steps:
            tr.append(k * dt, sysm, u, gpos, track_forcing)
            if n0 > 0 and tr.norms[-1] > abort_factor * n0:
                tr.final = u
                raise IntegrationAbort(f"amplitude blowup at t = {k * dt}", tr)
    tr.final = u
    return tr


# ---------------------------------------------------------------------------
# diagnostics


def coercivity_check(model: ModelSpec | _System, states: Sequence[State]) -> dict:
    """Ratio of the coercive functional to ||u||^2 over samples, with the linear-regime band."""
    sysm = model if isinstance(model, _System) else make_system(model)
    br = sysm.lattice.brackets() ** (2 * sysm.s)
    nls = not isinstance(sysm, KGSystem)
    if nls:
        pot = sysm.model.potential
        rho = pot.sup_norm() if pot is not None else 0.0
        if isinstance(sysm, NLS2DSystem):
            rho = float(np.sqrt(np.sum(np.asarray([abs(v) for v in (sysm.model.vhat or {}).values()]) ** 2)))
        shift = rho + 1
    else:
        shift = 0.0
    lin = (0.5 * sysm.omega.omega + shift) / br
    lo, hi = float(lin.min()), float(lin.max())
    rows = []
    for u in states:
        v = u.values
        nrm2 = float(np.sum(br * np.abs(v) ** 2))
        val = sysm.hamiltonian(v) + shift * sysm.mass(v)
        if nrm2 == 0:
            rows.append({"norm": 0.0, "value": val, "ratio": None, "inside": True})
            continue
        ratio = val / nrm2
        rows.append({"norm": math.sqrt(nrm2), "value": val, "ratio": ratio,
                     "inside": 0.5 * lo <= ratio <= 2.0 * hi})
    ratios = [r["ratio"] for r in rows if r["ratio"] is not None and r["ratio"] > 0]
    Lam = max([max(x, 1 / x) for x in ratios], default=float("nan"))
    return {"linear_band": [lo, hi], "Lambda": Lam, "samples": rows,
            "violations": [i for i, r in enumerate(rows) if not r["inside"]]}


def track_superactions(trace: Trace, b: float = 0.0, p: float | None = None, eps: float | None = None) -> list:
    """Per group: sup_t |J(t) - J(0)|, its time, and the drift normalized by <n>^b eps^p."""
    if not trace.times:
        raise InvalidInput("empty trace")
    J = trace.array("J")
    t = trace.array("times")
    out = []
    for i, g in enumerate(trace.groups):
        d = np.abs(J[:, i] - J[0, i])
        k = int(np.argmax(d))
        row = {"group": list(g), "drift": float(d[k]), "time": float(t[k])}
        if p is not None and eps is not None:
            br = math.sqrt(1 + sum(c * c for c in g))
            row["normalized"] = float(d[k] / (br ** b * eps ** p))
        out.append(row)
    return out


def orbital_alignment_error(trace: Trace, s: float = 1.0, lattice: Lattice | None = None) -> np.ndarray:
    """(sum <n>^{2s} (|u_n(t)| - |u_n(0)|)^2)^{1/2} at every sample time."""
    A = np.asarray(trace.amplitudes)
    if lattice is None:
        n = np.arange(1, A.shape[1] + 1, dtype=float)
        br = np.sqrt(1 + n * n)
    else:
        br = lattice.brackets()
    return np.sqrt(np.sum(br ** (2 * s) * (A - A[0]) ** 2, axis=1))


def superaction_rate(sysm: _System, u: State, n) -> float:
    """{J_n, H}(u) = (i grad J_n, grad H)."""
    m = sysm.omega.group_members(n)
    gJ = np.zeros(sysm.lattice.size, dtype=complex)
    gJ[m] = 2 * u.values[m]
    gH = sysm.gradient(u.values)
    return float(np.sum(np.real(np.conj(1j * gJ) * gH)))


# ---------------------------------------------------------------------------
# simulations and experiments


def nls_sturm_simulate(V: Potential, g: Nonlinearity, u0: State, T: float, dt: float, periodic: bool = False,
                       **kw) -> Trace:
    """NLS in the Sturm-Liouville eigenbasis; u0 lives on 1..K (or -K..K when periodic)."""
    K = u0.lattice.radius
    model = ModelSpec("NLS1D_Per" if periodic else "NLS1D_Dir", K, potential=V, g=g)
    return integrate(model, u0, T, dt, **kw)


def nls2d_simulate(Vhat: dict, u0: State, T: float, dt: float, g: Nonlinearity | None = None, **kw) -> Trace:
    model = ModelSpec("NLS2D_Conv", u0.lattice.radius, vhat=dict(Vhat), g=g or Nonlinearity.power(1.0, 1))
    return integrate(model, u0, T, dt, **kw)


def initial_state(sysm: _System, eps: float, rng: np.random.Generator, support: int | None = None,
                  decay: float = 1.0) -> State:
    return random_state(sysm.lattice, eps, sysm.s, rng, decay=decay, support=support)


def low_mode_drift(trace: Trace, modes: int) -> float:
    J = trace.array("J")
    sel = [i for i, g in enumerate(trace.groups) if max(abs(c) for c in g) <= modes]
    return float(np.max(np.abs(J[:, sel] - J[0, sel])))


def _with_K(model: ModelSpec, K: int) -> ModelSpec:
    return ModelSpec(model.kind, K, model.mass, model.potential, model.vhat, model.g, model.oversample, model.s)


def scaling_cell(model: ModelSpec, eps: float, seed: int, T: float, dt: float, modes: int,
                 support: int | None, samples: int, K_compare: int | None = None) -> dict:
    """One (eps, seed) cell: low-mode drift up to T, optionally repeated at a larger radius."""
    sysm = make_system(model)
    u0 = initial_state(sysm, eps, np.random.default_rng(seed), support=support)
    row = {"eps": eps, "seed": int(seed), "T": T}
    try:
        tr = integrate(sysm, u0, T, dt, samples=samples)
        row["drift"] = low_mode_drift(tr, modes)
        J = np.asarray(tr.J)
        row["per_mode"] = {_label(g): float(np.max(np.abs(J[:, i] - J[0, i])))
                           for i, g in enumerate(tr.groups) if max(abs(c) for c in g) <= modes}
        row["aborted"] = False
        if model.g.is_zero:
            # the linear flow is a diagonal phase; what remains is rounding in |exp(-i w t) u|
            row["rounding_drift"], row["drift"] = row["drift"], 0.0
            row["per_mode"] = {k: 0.0 for k in row["per_mode"]}
    except IntegrationAbort:
        row["drift"], row["aborted"] = float("nan"), True
    if K_compare:
        big = make_system(_with_K(model, K_compare))
        if big.lattice.size < sysm.lattice.size:
            raise InvalidInput("comparison radius must exceed the base radius")
        ub = State(big.lattice, np.concatenate([u0.values, np.zeros(big.lattice.size - u0.lattice.size)]))
        try:
            row["drift_K2"] = low_mode_drift(integrate(big, ub, T, dt, samples=samples), modes)
        except IntegrationAbort:
            row["drift_K2"], row["aborted"] = float("nan"), True
        row["rel_change"] = abs(row["drift_K2"] - row["drift"]) / max(row["drift"], 1e-300)
    return row


def _run_cell(args: tuple) -> dict:
    return scaling_cell(*args)


def scaling_experiment(model: ModelSpec, eps_list: Sequence[float], r: int, p: int, seeds: Sequence[int],
                       modes: int = 4, T_cap: float = math.inf, dt: float = 0.05, support: int | None = 4,
                       samples: int = 400, K_compare: int | None = None, map_fn=map) -> dict:
    """Max low-mode super-action drift up to T = min(eps^-(r-p), T_cap), fitted against eps.

    `map_fn` evaluates the independent (eps, seed) cells; pass an executor's map to parallelize.
    """
    eps_list = [float(e) for e in eps_list]
    if len(eps_list) < 3:
        raise InvalidInput("need at least three eps values")
    cells = [(model, eps, int(seed), min(eps ** (-(r - p)), T_cap), dt, modes, support, samples, K_compare)
             for eps in eps_list for seed in seeds]
    rows = list(map_fn(_run_cell, cells))
    flagged = any(r_["aborted"] for r_ in rows)
    per_eps = [float(np.max([r_["drift"] for r_ in rows if r_["eps"] == eps])) for eps in eps_list]
    d = np.array(per_eps)
    if np.all(d == 0):
        return {"slope": None, "exact_zero": True, "rows": rows, "per_eps": per_eps, "flagged": flagged}
    slope = float(np.polyfit(np.log(eps_list), np.log(d), 1)[0]) if np.all(d > 0) else float("nan")
    out = {"slope": slope, "exact_zero": False, "rows": rows, "per_eps": per_eps, "flagged": flagged,
           "target": p}
    if K_compare:
        out["max_rel_change"] = float(max(r_["rel_change"] for r_ in rows))
    return out
