"""Formal polynomial Hamiltonians on truncated lattices.

A monomial of degree r is a multiset of pairs (n_j, sigma_j).  Pairs are
encoded as integer *slots* ``2*pos(n) + (sigma+1)//2`` so that a canonical key
is a sorted row of slots (lexicographic in n, then sigma = -1 before +1).
The value stored at a key is the fully symmetrized coefficient H^sigma_n; the
polynomial is sum over keys of multiplicity * coefficient * prod u^sigma.

Conventions: (u, v) = Re sum conj(u_k) v_k, grad H = 2 d/d(conj u) H,
{H, K} = (i grad H, grad K), and the flow of chi solves du/dt = i grad chi(u).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .lattice import InvalidInput, Lattice, State, as_index
from .spectra import FrequencyFamily

_CHUNK = 2_000_000


class FlowFailure(RuntimeError):
    """The adaptive integrator could not complete a Hamiltonian flow."""

    def __init__(self, message: str, partial: dict | None = None):
        super().__init__(message)
        self.partial = partial or {}


# ---------------------------------------------------------------------------
# keys


def _slot(pos: int, sigma: int) -> int:
    return 2 * pos + (1 if sigma > 0 else 0)


def canonicalize(sigma: Sequence[int], n: Sequence) -> tuple[tuple, int]:
    """Sorted key [(n_j, sigma_j)] and orbit multiplicity r!/prod(repeats!)."""
    if len(sigma) != len(n):
        raise InvalidInput("sign vector and index tuple have different lengths")
    if any(s not in (-1, 1) for s in sigma):
        raise InvalidInput("signs must be +1 or -1")
    pairs = sorted((as_index(m), int(s)) for s, m in zip(sigma, n))
    mult = math.factorial(len(pairs))
    run = 1
    for a, b in zip(pairs, pairs[1:]):
        run = run + 1 if a == b else 1
        mult //= run
    key = tuple((m if len(m) > 1 else m[0], s) for m, s in pairs)
    return key, mult


def multiplicity(rows: np.ndarray) -> np.ndarray:
    """Orbit sizes of sorted slot rows."""
    M, r = rows.shape
    denom = np.ones(M)
    run = np.ones(M)
    for j in range(1, r):
        run = np.where(rows[:, j] == rows[:, j - 1], run + 1, 1)
        denom *= run
    return math.factorial(r) / denom


def _flip(rows: np.ndarray) -> np.ndarray:
    return np.sort(rows ^ 1, axis=1)


class _Codec:
    """Integer codes for sorted slot rows, used to merge duplicates quickly."""

    def __init__(self, n_slots: int, degree: int):
        self.base = max(2, n_slots)
        self.degree = degree
        self.ok = degree * math.log2(self.base) < 62

    def encode(self, rows: np.ndarray) -> np.ndarray:
        code = np.zeros(rows.shape[0], dtype=np.int64)
        for j in range(rows.shape[1]):
            code = code * self.base + rows[:, j]
        return code

    def decode(self, code: np.ndarray) -> np.ndarray:
        rows = np.empty((code.size, self.degree), dtype=np.int64)
        c = code.copy()
        for j in range(self.degree - 1, -1, -1):
            rows[:, j] = c % self.base
            c //= self.base
        return rows


def _reduce(rows: np.ndarray, coefs: np.ndarray, n_slots: int) -> tuple[np.ndarray, np.ndarray]:
    """Merge duplicate (already sorted) rows by summing coefficients; result sorted."""
    if rows.shape[0] == 0:
        return rows.reshape(0, rows.shape[1]).astype(np.int64), coefs.astype(complex)
    codec = _Codec(n_slots, rows.shape[1])
    if codec.ok:
        codes = codec.encode(rows)
        uniq, inv = np.unique(codes, return_inverse=True)
        out_rows = codec.decode(uniq)
    else:
        out_rows, inv = np.unique(rows, axis=0, return_inverse=True)
        inv = inv.reshape(-1)
    re = np.bincount(inv, weights=coefs.real, minlength=out_rows.shape[0])
    im = np.bincount(inv, weights=coefs.imag, minlength=out_rows.shape[0])
    return out_rows.astype(np.int64), re + 1j * im


# ---------------------------------------------------------------------------
# Hamiltonians


@dataclass(frozen=True)
class Block:
    rows: np.ndarray
    coefs: np.ndarray
    mult: np.ndarray


@dataclass(frozen=True)
class PolyHamiltonian:
    """Sparse polynomial Hamiltonian of degrees >= 3 on a finite lattice."""

    lattice: Lattice
    blocks: dict = field(default_factory=dict)
    dropped_mass: float = 0.0

    # construction ---------------------------------------------------------
    @classmethod
    def zero(cls, lattice: Lattice) -> "PolyHamiltonian":
        return cls(lattice, {})

    @classmethod
    def from_arrays(cls, lattice: Lattice, data: dict, prune: bool = True) -> "PolyHamiltonian":
        """data: degree -> (rows, coefs) with rows sorted; duplicates are merged."""
        blocks = {}
        n_slots = 2 * lattice.size
        for r, (rows, coefs) in data.items():
            if r < 3:
                raise InvalidInput("degree < 3 terms belong to the quadratic part")
            rows = np.sort(np.asarray(rows, dtype=np.int64).reshape(-1, r), axis=1)
            rows, coefs = _reduce(rows, np.asarray(coefs, dtype=complex), n_slots)
            if prune:
                keep = coefs != 0
                rows, coefs = rows[keep], coefs[keep]
            if rows.shape[0]:
                blocks[r] = Block(rows, coefs, multiplicity(rows))
        return cls(lattice, blocks)

    @classmethod
    def from_terms(cls, lattice: Lattice, terms: Iterable) -> "PolyHamiltonian":
        """Build from (sigma, n, c) triples, each added together with its conjugate."""
        H = cls.zero(lattice)
        acc: dict[int, list] = {}
        for sigma, n, c in terms:
            for r, row, val in _real_pair(lattice, sigma, n, c):
                acc.setdefault(r, []).append((row, val))
        data = {r: (np.array([a for a, _ in v]), np.array([b for _, b in v])) for r, v in acc.items()}
        return cls.from_arrays(lattice, data) if data else H

    # accessors -------------------------------------------------------------
    @property
    def degrees(self) -> list[int]:
        return sorted(self.blocks)

    @property
    def nnz(self) -> int:
        return sum(b.rows.shape[0] for b in self.blocks.values())

    @property
    def n_slots(self) -> int:
        return 2 * self.lattice.size

    def is_zero(self) -> bool:
        return self.nnz == 0

    def homogeneous(self, r: int) -> "PolyHamiltonian":
        return PolyHamiltonian(self.lattice, {r: self.blocks[r]} if r in self.blocks else {})

    def decode_rows(self, rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Positions and signs of slot rows."""
        return rows >> 1, 2 * (rows & 1) - 1

    def coefficient(self, sigma: Sequence[int], n: Sequence) -> complex:
        r = len(sigma)
        if r not in self.blocks:
            return 0j
        row = np.sort([_slot(self.lattice.position(m), s) for s, m in zip(sigma, n)])
        b = self.blocks[r]
        hit = np.nonzero(np.all(b.rows == row, axis=1))[0]
        return complex(b.coefs[hit[0]]) if hit.size else 0j

    def terms(self):
        """Yield (degree, key, coefficient) with key = ((n, sigma), ...)."""
        idx = self.lattice.indices
        for r in self.degrees:
            b = self.blocks[r]
            for row, c in zip(b.rows, b.coefs):
                key = tuple((idx[int(s) >> 1], 2 * (int(s) & 1) - 1) for s in row)
                yield r, key, complex(c)

    # algebra ---------------------------------------------------------------
    def _check(self, other: "PolyHamiltonian"):
        if other.lattice != self.lattice:
            raise InvalidInput("Hamiltonians live on different lattices")

    def __add__(self, other: "PolyHamiltonian") -> "PolyHamiltonian":
        self._check(other)
        data = {}
        for r in set(self.blocks) | set(other.blocks):
            parts = [h.blocks[r] for h in (self, other) if r in h.blocks]
            data[r] = (np.concatenate([p.rows for p in parts]), np.concatenate([p.coefs for p in parts]))
        out = PolyHamiltonian.from_arrays(self.lattice, data)
        return PolyHamiltonian(out.lattice, out.blocks, self.dropped_mass + other.dropped_mass)

    def __neg__(self) -> "PolyHamiltonian":
        return self.scaled(-1.0)

    def __sub__(self, other: "PolyHamiltonian") -> "PolyHamiltonian":
        return self + (-other)

    def scaled(self, c: complex) -> "PolyHamiltonian":
        if c == 0:
            return PolyHamiltonian.zero(self.lattice)
        return PolyHamiltonian(self.lattice, {r: Block(b.rows, b.coefs * c, b.mult) for r, b in self.blocks.items()},
                               self.dropped_mass)

    def map_blocks(self, fn) -> "PolyHamiltonian":
        """fn(rows, coefs) -> new coefs; zero results are pruned."""
        data = {}
        for r, b in self.blocks.items():
            c = np.asarray(fn(b.rows, b.coefs), dtype=complex)
            keep = c != 0
            if np.any(keep):
                rows = b.rows[keep]
                data[r] = Block(rows, c[keep], b.mult[keep])
        return PolyHamiltonian(self.lattice, data)

    def select(self, fn) -> "PolyHamiltonian":
        """Keep keys where fn(rows) is True."""
        data = {}
        for r, b in self.blocks.items():
            keep = np.asarray(fn(b.rows), dtype=bool)
            if np.any(keep):
                data[r] = Block(b.rows[keep], b.coefs[keep], b.mult[keep])
        return PolyHamiltonian(self.lattice, data)

    def truncate_degrees(self, lo: int, hi: int) -> "PolyHamiltonian":
        return PolyHamiltonian(self.lattice, {r: b for r, b in self.blocks.items() if lo <= r <= hi})

    def equals(self, other: "PolyHamiltonian", atol: float = 0.0) -> bool:
        d = self - other
        return all(np.all(np.abs(b.coefs) <= atol) for b in d.blocks.values())

    def reality_defect(self) -> float:
        """max |H^{-sigma}_n - conj(H^sigma_n)|."""
        worst = 0.0
        for r, b in self.blocks.items():
            fl = _flip(b.rows)
            codec = _Codec(self.n_slots, r)
            if codec.ok:
                a, f = codec.encode(b.rows), codec.encode(fl)
                order = np.argsort(a)
                loc = np.searchsorted(a, f, sorter=order)
                loc = np.clip(loc, 0, a.size - 1)
                hit = a[order[loc]] == f
                partner = np.where(hit, b.coefs[order[loc]], 0)
            else:
                lookup = {tuple(row): c for row, c in zip(b.rows, b.coefs)}
                partner = np.array([lookup.get(tuple(row), 0) for row in fl])
            worst = max(worst, float(np.max(np.abs(partner - np.conj(b.coefs)))))
        return worst

    # serialization ---------------------------------------------------------
    def to_json(self) -> str:
        out = []
        for r, key, c in self.terms():
            out.append({"degree": r, "key": [[*as_index(n), s] for n, s in key], "re": c.real, "im": c.imag})
        return json.dumps(out)

    @classmethod
    def from_json(cls, text: str, lattice: Lattice) -> "PolyHamiltonian":
        data: dict[int, list] = {}
        for t in json.loads(text):
            r = int(t["degree"])
            if r < 3:
                raise InvalidInput("degree < 3 entries are not allowed")
            row = sorted(_slot(lattice.position(k[:-1]), k[-1]) for k in t["key"])
            data.setdefault(r, []).append((row, complex(t["re"], t["im"])))
        H = cls.from_arrays(lattice, {r: (np.array([a for a, _ in v]), np.array([b for _, b in v]))
                                      for r, v in data.items()})
        return symmetrize_reality(H)


def _real_pair(lattice: Lattice, sigma, n, c):
    r = len(sigma)
    if r != len(n):
        raise InvalidInput("sign vector and index tuple have different lengths")
    if r < 3:
        raise InvalidInput("degree < 3 terms belong to the quadratic part")
    row = sorted(_slot(lattice.position(m), s) for s, m in zip(sigma, n))
    frow = sorted(x ^ 1 for x in row)
    if frow == row:
        return [(r, row, complex(c).real)]
    return [(r, row, complex(c)), (r, frow, complex(c).conjugate())]


def add_monomial(H: PolyHamiltonian, sigma: Sequence[int], n: Sequence, c: complex) -> PolyHamiltonian:
    """Add c at (sigma, n) and conj(c) at (-sigma, n).

    For a self-conjugate key (the multiset is invariant under sign flip) only the
    real part of c is added, which is the only value compatible with reality.
    """
    return H + PolyHamiltonian.from_terms(H.lattice, [(sigma, n, c)])


def symmetrize_reality(H: PolyHamiltonian) -> PolyHamiltonian:
    """Project onto the real subspace: c_key <- (c_key + conj(c_flip)) / 2."""
    data = {}
    for r, b in H.blocks.items():
        rows = np.concatenate([b.rows, _flip(b.rows)])
        coefs = np.concatenate([b.coefs, np.conj(b.coefs)]) / 2
        data[r] = (rows, coefs)
    return PolyHamiltonian.from_arrays(H.lattice, data)


# ---------------------------------------------------------------------------
# evaluation


def _zvec(u) -> np.ndarray:
    v = u.values if isinstance(u, State) else np.asarray(u, dtype=complex)
    z = np.empty(2 * v.size, dtype=complex)
    z[0::2] = np.conj(v)
    z[1::2] = v
    return z


def evaluate_complex(H: PolyHamiltonian, u) -> complex:
    z = _zvec(u)
    total = 0j
    for b in H.blocks.values():
        for s in range(0, b.rows.shape[0], _CHUNK):
            sl = slice(s, s + _CHUNK)
            total += np.sum(b.mult[sl] * b.coefs[sl] * np.prod(z[b.rows[sl]], axis=1))
    return complex(total)


def evaluate(H: PolyHamiltonian, u) -> float:
    """Real value of H at u."""
    return evaluate_complex(H, u).real


def _dz(H: PolyHamiltonian, z: np.ndarray) -> np.ndarray:
    """Partial derivatives with respect to every slot variable."""
    out = np.zeros(z.size, dtype=complex)
    for b in H.blocks.values():
        Z = z[b.rows]
        M, r = Z.shape
        pre = np.ones((M, r + 1), dtype=complex)
        suf = np.ones((M, r + 1), dtype=complex)
        for j in range(r):
            pre[:, j + 1] = pre[:, j] * Z[:, j]
            suf[:, r - j - 1] = suf[:, r - j] * Z[:, r - j - 1]
        w = b.mult * b.coefs
        for j in range(r):
            contrib = w * pre[:, j] * suf[:, j + 1]
            out += np.bincount(b.rows[:, j], weights=contrib.real, minlength=z.size)
            out += 1j * np.bincount(b.rows[:, j], weights=contrib.imag, minlength=z.size)
    return out


def gradient(H: PolyHamiltonian, u) -> State | np.ndarray:
    """(grad H(u))_k = 2 dH/d(conj u_k)."""
    g = 2.0 * _dz(H, _zvec(u))[0::2]
    return State(u.lattice, g) if isinstance(u, State) else g


def hessian_z(H: PolyHamiltonian, z: np.ndarray) -> np.ndarray:
    """Second derivatives d^2 H / dz_a dz_b in slot variables."""
    S = z.size
    flat = np.zeros(S * S, dtype=complex)
    for b in H.blocks.values():
        Z = z[b.rows]
        M, r = Z.shape
        w = b.mult * b.coefs
        for i in range(r):
            for j in range(r):
                if i == j:
                    continue
                cols = [c for c in range(r) if c not in (i, j)]
                rest = np.prod(Z[:, cols], axis=1) if cols else np.ones(M)
                contrib = w * rest
                idx = b.rows[:, i] * S + b.rows[:, j]
                flat += np.bincount(idx, weights=contrib.real, minlength=S * S)
                flat += 1j * np.bincount(idx, weights=contrib.imag, minlength=S * S)
    return flat.reshape(S, S)


def norm_q_alpha(H: PolyHamiltonian, q: float, alpha: float) -> float:
    """sup over keys of hmean_nu <sum nu_l . n_l>^alpha * prod <n_j>^q * |H^sigma_n|."""
    coords = H.lattice.coords().astype(float)
    br = H.lattice.brackets()
    d = H.lattice.d
    best = 0.0
    for r, b in H.blocks.items():
        pos = b.rows >> 1
        weight = np.prod(br[pos] ** q, axis=1) * np.abs(b.coefs)
        if alpha == 0:
            best = max(best, float(np.max(weight)))
            continue
        X = coords[pos]  # (M, r, d)
        signs = np.array(np.meshgrid(*[[-1.0, 1.0]] * (r * d), indexing="ij")).reshape(r * d, -1).T
        signs = signs.reshape(-1, r, d)
        for s in range(0, X.shape[0], max(1, _CHUNK // signs.shape[0])):
            Xs = X[s:s + max(1, _CHUNK // signs.shape[0])]
            S = np.einsum("mrd,vrd->mvd", Xs, signs)
            brs = np.sqrt(1.0 + np.sum(S * S, axis=2)) ** alpha
            hm = 1.0 / np.mean(1.0 / brs, axis=1)
            best = max(best, float(np.max(hm * weight[s:s + Xs.shape[0]])))
    return best


# ---------------------------------------------------------------------------
# brackets


def _derivative_table(b: Block) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """slot -> (reduced rows, function-value weights) of dH/dz_slot for one block."""
    M, r = b.rows.shape
    w = b.mult * b.coefs
    slots = b.rows.T.reshape(-1)
    reduced = np.concatenate([np.delete(b.rows, j, axis=1) for j in range(r)])
    weights = np.tile(w, r)
    order = np.argsort(slots, kind="stable")
    slots, reduced, weights = slots[order], reduced[order], weights[order]
    bounds = np.flatnonzero(np.diff(slots)) + 1
    starts = np.concatenate([[0], bounds])
    ends = np.concatenate([bounds, [slots.size]])
    return {int(slots[s]): (reduced[s:e], weights[s:e]) for s, e in zip(starts, ends)}


def poisson_bracket(H: PolyHamiltonian, K: PolyHamiltonian) -> PolyHamiltonian:
    """{H, K} = 2i sum_k (dH/d conj(u_k) dK/du_k - dH/du_k dK/d conj(u_k))."""
    H._check(K)
    lat = H.lattice
    n_slots = 2 * lat.size
    data: dict[int, list] = {}
    for rh, bh in H.blocks.items():
        th = _derivative_table(bh)
        for rk, bk in K.blocks.items():
            tk = _derivative_table(bk)
            deg = rh + rk - 2
            acc_rows, acc_w = [], []
            size = 0
            for p in range(lat.size):
                for sh, sk, fac in ((2 * p, 2 * p + 1, 2j), (2 * p + 1, 2 * p, -2j)):
                    if sh not in th or sk not in tk:
                        continue
                    ra, wa = th[sh]
                    rb, wb = tk[sk]
                    rows = np.concatenate([np.repeat(ra, rb.shape[0], axis=0), np.tile(rb, (ra.shape[0], 1))], axis=1)
                    rows.sort(axis=1)
                    acc_rows.append(rows)
                    acc_w.append(fac * np.outer(wa, wb).reshape(-1))
                    size += rows.shape[0]
                    if size > _CHUNK:
                        r_, w_ = _reduce(np.concatenate(acc_rows), np.concatenate(acc_w), n_slots)
                        acc_rows, acc_w, size = [r_], [w_], r_.shape[0]
            if acc_rows:
                data.setdefault(deg, []).append(_reduce(np.concatenate(acc_rows), np.concatenate(acc_w), n_slots))
    out = {}
    for deg, parts in data.items():
        rows, w = _reduce(np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts]), n_slots)
        out[deg] = (rows, w / multiplicity(rows))
    return PolyHamiltonian.from_arrays(lat, out)


@dataclass(frozen=True)
class QuadraticDiagonal:
    """Z2(u) = scale * sum omega_n |u_n|^2 (scale = 1/2 by default)."""

    omega: FrequencyFamily
    scale: float = 0.5

    @property
    def lattice(self) -> Lattice:
        return self.omega.lattice

    def evaluate(self, u) -> float:
        v = u.values if isinstance(u, State) else np.asarray(u)
        return float(self.scale * np.sum(self.omega.omega * np.abs(v) ** 2))

    def gradient(self, u):
        v = u.values if isinstance(u, State) else np.asarray(u)
        g = 2.0 * self.scale * self.omega.omega * v
        return State(u.lattice, g) if isinstance(u, State) else g

    def divisors(self, rows: np.ndarray) -> np.ndarray:
        """sigma . omega for slot rows."""
        pos, sig = rows >> 1, 2 * (rows & 1) - 1
        return np.sum(sig * self.omega.omega[pos], axis=1)


def poisson_with_Z2(H: PolyHamiltonian, Z2: QuadraticDiagonal) -> PolyHamiltonian:
    """{H, Z2}: each coefficient multiplied by -2i * scale * (sigma . omega)."""
    if Z2.lattice != H.lattice:
        raise InvalidInput("Hamiltonians live on different lattices")
    return H.map_blocks(lambda rows, c: -2j * Z2.scale * Z2.divisors(rows) * c)


def group_indicator(omega: FrequencyFamily, n) -> QuadraticDiagonal:
    """J_n as a quadratic form: scale 1 with the indicator of the frequency group of n."""
    ind = np.zeros(omega.lattice.size)
    ind[omega.group_members(n)] = 1.0
    return QuadraticDiagonal(FrequencyFamily(omega.lattice, ind, omega.tol), scale=1.0)


def super_action(omega: FrequencyFamily, n, u) -> float:
    """J_n(u) = sum of |u_k|^2 over the frequency group of n."""
    v = u.values if isinstance(u, State) else np.asarray(u)
    return float(np.sum(np.abs(v[omega.group_members(n)]) ** 2))


def super_action_gradient(omega: FrequencyFamily, n, u):
    v = u.values if isinstance(u, State) else np.asarray(u)
    g = np.zeros_like(v, dtype=complex)
    m = omega.group_members(n)
    g[m] = 2.0 * v[m]
    return State(u.lattice, g) if isinstance(u, State) else g


# ---------------------------------------------------------------------------
# flows


def _real(v: np.ndarray) -> np.ndarray:
    return np.concatenate([v.real, v.imag])


def _cplx(x: np.ndarray) -> np.ndarray:
    K = x.size // 2
    return x[:K] + 1j * x[K:]


def _vector_field(chi: PolyHamiltonian, x: np.ndarray) -> np.ndarray:
    u = _cplx(x)
    return _real(1j * gradient(chi, u))


def _real_jacobian(chi: PolyHamiltonian, x: np.ndarray) -> np.ndarray:
    u = _cplx(x)
    Hs = hessian_z(chi, _zvec(u))
    A = 2.0 * Hs[0::2, 1::2]
    B = 2.0 * Hs[0::2, 0::2]
    M1, M2 = 1j * A, 1j * B
    P, Q = M1 + M2, M1 - M2
    return np.block([[P.real, -Q.imag], [P.imag, Q.real]])


def symplectic_form(K: int) -> np.ndarray:
    I = np.eye(K)
    Z = np.zeros((K, K))
    return np.block([[Z, I], [-I, Z]])


@dataclass(frozen=True)
class FlowResult:
    """Time-t flow of a Hamiltonian at one point.

    The displacement u(t) - u(0) and the Jacobian offset dPhi - I are integrated
    directly so that tolerances act on these (small) quantities.
    """

    state: State
    displacement: np.ndarray
    jacobian_delta: np.ndarray | None
    nfev: int
    symplecticity_residual: float
    roundtrip_error: float | None = None

    @property
    def jacobian(self) -> np.ndarray | None:
        if self.jacobian_delta is None:
            return None
        return np.eye(self.jacobian_delta.shape[0]) + self.jacobian_delta

    def apply_differential(self, v) -> State | np.ndarray:
        vals = v.values if isinstance(v, State) else np.asarray(v, dtype=complex)
        out = _cplx(self.jacobian @ _real(vals))
        return State(v.lattice, out) if isinstance(v, State) else out

    def differential_norm(self, s: float) -> float:
        """Operator norm of the differential on h^s (use negative s for the extension to h^{-s})."""
        return operator_norm(self.jacobian, self.state.lattice, s)


def operator_norm(J: np.ndarray, lattice: Lattice, s: float) -> float:
    w = np.tile(lattice.brackets() ** s, 2)
    return float(np.linalg.norm((w[:, None] * J) / w[None, :], 2))


def flow(chi: PolyHamiltonian, u0: State, t: float = 1.0, tol: float = 1e-10,
         differential: bool = True, roundtrip: bool = False, guard: float = 1e3) -> FlowResult:
    """Integrate du/dt = i grad chi(u) from u0 for time t with DOP853."""
    K = u0.lattice.size
    n = 2 * K
    x0 = _real(u0.values)
    if chi.is_zero() or t == 0:
        D = np.zeros((n, n)) if differential else None
        return FlowResult(u0, np.zeros(K, dtype=complex), D, 0, 0.0, 0.0 if roundtrip else None)
    limit = guard * max(np.linalg.norm(x0), 1e-300)
    F0 = _vector_field(chi, x0)
    dscale = max(float(np.max(np.abs(F0))) * abs(t), 1e-300)

    if differential:
        A0 = _real_jacobian(chi, x0)
        jscale = max(float(np.max(np.abs(A0))) * abs(t), 1e-300)
        y0 = np.zeros(n + n * n)
        eye = np.eye(n)

        def rhs(_, y):
            x = x0 + y[:n]
            D = y[n:].reshape(n, n)
            return np.concatenate([_vector_field(chi, x), (_real_jacobian(chi, x) @ (eye + D)).reshape(-1)])

        atol = np.concatenate([np.full(n, tol * dscale), np.full(n * n, tol * jscale)])
    else:
        y0 = np.zeros(n)

        def rhs(_, y):
            return _vector_field(chi, x0 + y)

        atol = tol * dscale

    def blowup(_, y):
        return limit - np.linalg.norm(x0 + y[:n])

    blowup.terminal = True
    sol = solve_ivp(rhs, (0.0, t), y0, method="DOP853", rtol=tol, atol=atol, events=blowup)
    if sol.status != 0:
        partial = {"t": float(sol.t[-1]), "state": _cplx(x0 + sol.y[:n, -1]).tolist()}
        raise FlowFailure(f"flow integration failed: {sol.message}", partial)
    y = sol.y[:, -1]
    disp = _cplx(y[:n])
    state = State(u0.lattice, u0.values + disp)
    D = y[n:].reshape(n, n) if differential else None
    sym = 0.0
    if D is not None:
        Om = symplectic_form(K)
        # (I+D)^T Om (I+D) - Om without forming I + D
        sym = float(np.max(np.abs(D.T @ Om + Om @ D + D.T @ Om @ D)))
    rt = None
    if roundtrip:
        back = flow(chi, state, -t, tol, differential=False)
        rt = float(np.linalg.norm(back.state.values - u0.values))
    return FlowResult(state, disp, D, int(sol.nfev), sym, rt)
