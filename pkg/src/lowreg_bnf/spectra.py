"""Sturm-Liouville spectra of -d^2/dx^2 + V and frequency families.

The operator is discretized by a symmetric Galerkin method in the orthonormal
sine basis (Dirichlet) or cosine basis (Neumann) of L^2(0, pi).  Multiplication
by V is assembled with the trapezoid rule on a uniform grid.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import fft as sfft
from scipy import linalg as sla

from .lattice import InvalidInput, Lattice, State, as_index

SQ2PI = math.sqrt(2.0 / math.pi)


class DegenerateSpectrum(ArithmeticError):
    """Two eigenvalues entering a perturbation sum are numerically equal."""


# ---------------------------------------------------------------------------
# potentials


@dataclass(frozen=True)
class Potential:
    """V(x) = sum_m a_m cos(m x) + sum_m b_m sin(m x), viewed on T or on (0, pi).

    `cos_coeffs[m]` is a_m for m >= 0 and `sin_coeffs[m]` is b_m (entry 0 unused).
    """

    cos_coeffs: np.ndarray
    sin_coeffs: np.ndarray
    grid_size: int = 512
    label: str = ""

    def __post_init__(self):
        a = np.array(self.cos_coeffs, dtype=float).reshape(-1)
        b = np.array(self.sin_coeffs, dtype=float).reshape(-1)
        if a.size == 0:
            a = np.zeros(1)
        if b.size == 0:
            b = np.zeros(1)
        b = b.copy()
        b[0] = 0.0
        for arr in (a, b):
            arr.setflags(write=False)
        object.__setattr__(self, "cos_coeffs", a)
        object.__setattr__(self, "sin_coeffs", b)

    # constructors -------------------------------------------------------
    @classmethod
    def zero(cls) -> "Potential":
        return cls(np.zeros(1), np.zeros(1), label="zero")

    @classmethod
    def constant(cls, c: float) -> "Potential":
        return cls(np.array([c]), np.zeros(1), label=f"constant {c}")

    @classmethod
    def cosine(cls, a: Sequence[float], label: str = "") -> "Potential":
        return cls(np.asarray(a, float), np.zeros(1), label=label)

    @classmethod
    def fourier(cls, a: Sequence[float], b: Sequence[float], label: str = "") -> "Potential":
        return cls(np.asarray(a, float), np.asarray(b, float), label=label)

    @classmethod
    def mode(cls, j: int, kind: str = "cos", amplitude: float = 1.0) -> "Potential":
        c = np.zeros(j + 1)
        c[j] = amplitude
        if kind == "cos":
            return cls(c, np.zeros(1), label=f"cos({j}x)")
        return cls(np.zeros(1), c, label=f"sin({j}x)")

    @classmethod
    def from_grid(cls, samples: Sequence[float]) -> "Potential":
        """Samples on the uniform grid x_j = j pi/(M-1), j = 0..M-1 (endpoints included)."""
        v = np.asarray(samples, dtype=float)
        if v.size < 2:
            raise InvalidInput("need at least two grid samples")
        a = sfft.dct(v, type=1) / (v.size - 1)
        a[0] /= 2.0
        a[-1] /= 2.0
        return cls(a, np.zeros(1), grid_size=v.size, label="grid")

    @classmethod
    def from_callable(cls, f: Callable[[np.ndarray], np.ndarray], grid_size: int = 513) -> "Potential":
        x = np.linspace(0.0, math.pi, grid_size)
        return cls.from_grid(f(x))

    # algebra ------------------------------------------------------------
    def _padded(self, other: "Potential"):
        na = max(self.cos_coeffs.size, other.cos_coeffs.size)
        nb = max(self.sin_coeffs.size, other.sin_coeffs.size)
        pa = lambda c, n: np.pad(c, (0, n - c.size))
        return (pa(self.cos_coeffs, na), pa(other.cos_coeffs, na),
                pa(self.sin_coeffs, nb), pa(other.sin_coeffs, nb))

    def __add__(self, other: "Potential") -> "Potential":
        a1, a2, b1, b2 = self._padded(other)
        return Potential(a1 + a2, b1 + b2, self.grid_size)

    def scaled(self, c: float) -> "Potential":
        return Potential(c * self.cos_coeffs, c * self.sin_coeffs, self.grid_size, self.label)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        m = np.arange(self.cos_coeffs.size)
        out = np.cos(np.multiply.outer(x, m)) @ self.cos_coeffs
        if np.any(self.sin_coeffs):
            m = np.arange(self.sin_coeffs.size)
            out = out + np.sin(np.multiply.outer(x, m)) @ self.sin_coeffs
        return out

    # derived quantities ---------------------------------------------------
    @property
    def is_even(self) -> bool:
        return not np.any(np.abs(self.sin_coeffs) > 1e-14)

    def mean_interval(self) -> float:
        """pi^{-1} int_0^pi V."""
        m = np.arange(1, self.sin_coeffs.size)
        return float(self.cos_coeffs[0] + np.sum(self.sin_coeffs[1:] * (1 - np.cos(m * math.pi)) / (m * math.pi)))

    def integral_interval(self) -> float:
        return math.pi * self.mean_interval()

    @property
    def H1_norm(self) -> float:
        """H^1(T) norm of the 2 pi-periodic function."""
        a, b = self.cos_coeffs, self.sin_coeffs
        ma = np.arange(a.size)
        mb = np.arange(b.size)
        tot = 2 * math.pi * a[0] ** 2
        tot += math.pi * np.sum((1 + ma[1:] ** 2) * a[1:] ** 2)
        tot += math.pi * np.sum((1 + mb[1:] ** 2) * b[1:] ** 2)
        return float(math.sqrt(tot))

    def H1_norm_interval(self, grid: int = 4097) -> float:
        x = np.linspace(0, math.pi, grid)
        v = self(x)
        ma = np.arange(self.cos_coeffs.size)
        mb = np.arange(self.sin_coeffs.size)
        dv = -np.sin(np.multiply.outer(x, ma)) @ (ma * self.cos_coeffs)
        dv = dv + np.cos(np.multiply.outer(x, mb)) @ (mb * self.sin_coeffs)
        return float(math.sqrt(np.trapezoid(v * v + dv * dv, x)))

    def sup_norm(self, grid: int = 4097) -> float:
        return float(np.max(np.abs(self(np.linspace(0, 2 * math.pi, grid)))))

    def centered_antiderivative(self, x) -> np.ndarray:
        """int_0^x (V - pi^{-1} int_0^pi V)."""
        x = np.asarray(x, dtype=float)
        out = (self.cos_coeffs[0] - self.mean_interval()) * x
        m = np.arange(1, self.cos_coeffs.size)
        if m.size:
            out = out + np.sin(np.multiply.outer(x, m)) @ (self.cos_coeffs[1:] / m)
        m = np.arange(1, self.sin_coeffs.size)
        if m.size:
            out = out + (1 - np.cos(np.multiply.outer(x, m))) @ (self.sin_coeffs[1:] / m)
        return out

    def to_json(self) -> str:
        return json.dumps({"basis": "fourier", "cos": self.cos_coeffs.tolist(),
                           "sin": self.sin_coeffs.tolist(), "label": self.label})

    @classmethod
    def from_json(cls, text: str) -> "Potential":
        d = json.loads(text)
        basis = d.get("basis", "fourier")
        if basis == "fourier":
            return cls(np.asarray(d["cos"], float), np.asarray(d.get("sin", [0.0]), float),
                       label=d.get("label", ""))
        if basis == "cosine":
            return cls.cosine(d["cos"], label=d.get("label", ""))
        if basis == "grid":
            return cls.from_grid(d["samples"])
        raise InvalidInput(f"unknown potential basis tag {basis!r}")

    @classmethod
    def from_csv(cls, path: str) -> "Potential":
        data = np.loadtxt(path, delimiter=",", ndmin=2, comments="#")
        return cls.from_grid(data[:, -1])


# ---------------------------------------------------------------------------
# Galerkin machinery


def _basis(kind: str, modes: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Orthonormal basis functions of L^2(0, pi) sampled at x; shape (len(modes), len(x))."""
    arg = np.multiply.outer(modes, x)
    if kind == "dirichlet":
        return SQ2PI * np.sin(arg)
    e = SQ2PI * np.cos(arg)
    e[modes == 0] = 1.0 / math.sqrt(math.pi)
    return e


def _basis_dx(kind: str, modes: np.ndarray, x: np.ndarray) -> np.ndarray:
    arg = np.multiply.outer(modes, x)
    if kind == "dirichlet":
        return SQ2PI * modes[:, None] * np.cos(arg)
    return -SQ2PI * modes[:, None] * np.sin(arg)


@dataclass(frozen=True)
class _Quadrature:
    x: np.ndarray
    w: np.ndarray

    @classmethod
    def uniform(cls, n_intervals: int) -> "_Quadrature":
        x = np.linspace(0.0, math.pi, n_intervals + 1)
        w = np.full(x.size, math.pi / n_intervals)
        w[0] *= 0.5
        w[-1] *= 0.5
        return cls(x, w)


def _modes(kind: str, dim: int) -> np.ndarray:
    return np.arange(1, dim + 1) if kind == "dirichlet" else np.arange(0, dim)


def multiplication_matrix(kind: str, dim: int, W: Potential, oversample: int = 8) -> np.ndarray:
    """Galerkin matrix (e_j, W e_k) assembled by the trapezoid rule."""
    quad = _Quadrature.uniform(oversample * dim)
    E = _basis(kind, _modes(kind, dim), quad.x)
    return (E * (quad.w * W(quad.x))) @ E.T


@dataclass(frozen=True)
class EigenSystem:
    """Galerkin eigenpairs of -d^2/dx^2 + V with Dirichlet or Neumann conditions.

    Row i of `coeffs` holds the basis coefficients of the i-th eigenfunction; all
    `galerkin_dim` eigenpairs are retained, the first `n_max` ones are exposed
    through `indices`.
    """

    kind: str
    potential: Potential
    galerkin_dim: int
    n_max: int
    eigenvalues_all: np.ndarray
    coeffs: np.ndarray
    residuals: np.ndarray
    oversample: int = 8
    _grid: np.ndarray = field(default=None, repr=False)

    @property
    def indices(self) -> list[int]:
        if self.kind == "dirichlet":
            return list(range(1, self.n_max + 1))
        return [-k for k in range(0, self.n_max + 1)]

    def row(self, n: int) -> int:
        n = int(n)
        if self.kind == "dirichlet":
            if n < 1 or n > self.galerkin_dim:
                raise InvalidInput(f"Dirichlet index {n} out of range")
            return n - 1
        if n > 0 or -n >= self.galerkin_dim:
            raise InvalidInput(f"Neumann index {n} out of range")
        return -n

    def index_of_row(self, i: int) -> int:
        return i + 1 if self.kind == "dirichlet" else -i

    @property
    def eigenvalues(self) -> dict[int, float]:
        return {n: float(self.eigenvalues_all[self.row(n)]) for n in self.indices}

    def eigenvalue(self, n: int) -> float:
        return float(self.eigenvalues_all[self.row(n)])

    @property
    def modes(self) -> np.ndarray:
        return _modes(self.kind, self.galerkin_dim)

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, math.pi, 8 * self.galerkin_dim + 1)

    def eigenfunction(self, n: int, x=None) -> np.ndarray:
        x = self.grid if x is None else np.asarray(x, dtype=float)
        return self.coeffs[self.row(n)] @ _basis(self.kind, self.modes, x)

    def eigenfunction_dx(self, n: int, x=None) -> np.ndarray:
        x = self.grid if x is None else np.asarray(x, dtype=float)
        return self.coeffs[self.row(n)] @ _basis_dx(self.kind, self.modes, x)

    @property
    def eigenfunctions(self) -> dict[int, np.ndarray]:
        B = _basis(self.kind, self.modes, self.grid)
        return {n: self.coeffs[self.row(n)] @ B for n in self.indices}

    def overlap(self, n: int, k: int) -> float:
        """Coefficient of f_n on the k-th basis function (sin(kx) or cos(kx))."""
        k = abs(int(k))
        pos = k - 1 if self.kind == "dirichlet" else k
        if pos < 0 or pos >= self.galerkin_dim:
            return 0.0
        return float(self.coeffs[self.row(n), pos])

    @property
    def overlaps(self) -> dict[tuple[int, int], float]:
        return {(n, int(k)): float(self.coeffs[self.row(n), j])
                for n in self.indices for j, k in enumerate(self.modes)}

    def residual(self, n: int) -> float:
        return float(self.residuals[self.row(n)])

    def to_csv(self) -> str:
        lines = ["index,lambda,residual"]
        for n in self.indices:
            lines.append(f"{n},{self.eigenvalue(n):.17g},{self.residual(n):.17g}")
        return "\n".join(lines) + "\n"

    def eigenfunctions_json(self, samples: int = 65) -> str:
        x = np.linspace(0.0, math.pi, samples)
        return json.dumps({"kind": self.kind, "x": x.tolist(),
                           "f": {str(n): self.eigenfunction(n, x).tolist() for n in self.indices}})


def _solve(kind: str, V: Potential, n_max: int, galerkin_dim: int, oversample: int = 8) -> EigenSystem:
    if galerkin_dim < 4 * n_max:
        raise InvalidInput(f"galerkin_dim={galerkin_dim} must be at least 4*n_max={4 * n_max}")
    if oversample < 8:
        raise InvalidInput("quadrature oversampling must be at least 8")
    modes = _modes(kind, galerkin_dim)
    A = np.diag(modes.astype(float) ** 2) + multiplication_matrix(kind, galerkin_dim, V, oversample)
    asym = np.max(np.abs(A - A.T))
    if asym > 1e-12 * max(1.0, np.max(np.abs(A))):
        raise RuntimeError(f"assembled Galerkin matrix is not symmetric ({asym:.3g})")
    lam, vec = sla.eigh(0.5 * (A + A.T))
    C = vec.T.copy()
    # sign: positive coefficient on the same-index basis function, else on the largest one
    for i in range(C.shape[0]):
        ref = C[i, i] if abs(C[i, i]) > 1e-8 else C[i, np.argmax(np.abs(C[i]))]
        if ref < 0:
            C[i] = -C[i]
    res = _residuals(kind, V, lam, C, min(C.shape[0], n_max + 1), oversample)
    return EigenSystem(kind, V, galerkin_dim, n_max, lam, C, res, oversample)


def _residuals(kind, V, lam, C, count, oversample) -> np.ndarray:
    dim = C.shape[1]
    modes = _modes(kind, dim)
    quad = _Quadrature.uniform(oversample * dim)
    E = _basis(kind, modes, quad.x)
    f = C[:count] @ E
    lap = (C[:count] * modes.astype(float) ** 2) @ E
    r = lap + f * V(quad.x) - lam[:count, None] * f
    out = np.full(lam.size, np.nan)
    out[:count] = np.sqrt(np.sum(quad.w * r * r, axis=1))
    return out


def dirichlet_spectrum(V: Potential, n_max: int, galerkin_dim: int | None = None,
                       oversample: int = 8) -> EigenSystem:
    return _solve("dirichlet", V, n_max, galerkin_dim or 4 * n_max, oversample)


def neumann_spectrum(V: Potential, n_max: int, galerkin_dim: int | None = None,
                     oversample: int = 8) -> EigenSystem:
    return _solve("neumann", V, n_max, galerkin_dim or 4 * (n_max + 1), oversample)


@dataclass(frozen=True)
class PeriodicEvenSystem:
    """Merged spectrum on T of an even potential: n >= 1 Dirichlet, n <= 0 Neumann."""

    dirichlet: EigenSystem
    neumann: EigenSystem

    @property
    def n_max(self) -> int:
        return self.dirichlet.n_max

    @property
    def indices(self) -> list[int]:
        return list(range(-self.n_max, self.n_max + 1))

    @property
    def eigenvalues(self) -> dict[int, float]:
        return {n: self.eigenvalue(n) for n in self.indices}

    def eigenvalue(self, n: int) -> float:
        return self.dirichlet.eigenvalue(n) if n > 0 else self.neumann.eigenvalue(n)

    def eigenfunction_T(self, n: int, x) -> np.ndarray:
        """f_n extended to T (odd for n > 0, even for n <= 0); unit norm after dividing by sqrt 2."""
        x = np.mod(np.asarray(x, dtype=float), 2 * math.pi)
        inside = x <= math.pi
        y = np.where(inside, x, 2 * math.pi - x)
        if n > 0:
            f = self.dirichlet.eigenfunction(n, y)
            return np.where(inside, f, -f)
        return self.neumann.eigenfunction(n, y)

    def residual_T(self, n: int, samples: int | None = None) -> float:
        """L^2(T) norm of (-f'' + V f - lambda f) for the normalized f_n/sqrt 2."""
        sub = self.dirichlet if n > 0 else self.neumann
        kind = sub.kind
        modes = sub.modes
        m = samples or 8 * sub.galerkin_dim
        x = np.linspace(0, 2 * math.pi, 2 * m, endpoint=False)
        c = sub.coeffs[sub.row(n)]
        E = _basis(kind, modes, x)  # sin/cos on T: already the odd/even extension
        f = c @ E / math.sqrt(2)
        lap = (c * modes.astype(float) ** 2) @ E / math.sqrt(2)
        r = lap + sub.potential(x) * f - sub.eigenvalue(n) * f
        return float(math.sqrt(np.sum(r * r) * (2 * math.pi / x.size)))


def periodic_spectrum_even(V: Potential, n_max: int, galerkin_dim: int | None = None,
                           oversample: int = 8) -> PeriodicEvenSystem:
    if not V.is_even:
        raise InvalidInput("periodic spectrum requires an even potential")
    gd = galerkin_dim or 4 * (n_max + 1)
    return PeriodicEvenSystem(dirichlet_spectrum(V, n_max, gd, oversample),
                              neumann_spectrum(V, n_max, gd, oversample))


# ---------------------------------------------------------------------------
# perturbation formulas


def _overlap_matrix(E: EigenSystem, W: Potential) -> np.ndarray:
    if not isinstance(W, Potential):
        raise InvalidInput("W must be a Potential")
    M = multiplication_matrix(E.kind, E.galerkin_dim, W, E.oversample)
    return E.coeffs @ M @ E.coeffs.T


def eigenvalue_derivative(E: EigenSystem, n: int, W: Potential) -> float:
    """int_0^pi W f_n^2."""
    M = multiplication_matrix(E.kind, E.galerkin_dim, W, E.oversample)
    c = E.coeffs[E.row(n)]
    return float(c @ M @ c)


@dataclass(frozen=True)
class SecondDerivative:
    value: float
    tail_bound: float
    terms: int


def eigenvalue_second_derivative(E: EigenSystem, n: int, W: Potential, k_trunc: int | None = None,
                                 degeneracy_tol: float = 1e-10) -> SecondDerivative:
    """2 sum_{k != n} (lambda_n - lambda_k)^{-1} (int W f_n f_k)^2 over the same-kind spectrum."""
    i = E.row(n)
    k_trunc = E.galerkin_dim if k_trunc is None else int(k_trunc)
    if k_trunc > E.galerkin_dim:
        raise InvalidInput("k_trunc exceeds the computed spectrum")
    O = _overlap_matrix(E, W)[i]
    lam = E.eigenvalues_all
    idx = np.array([j for j in range(k_trunc) if j != i], dtype=int)
    gaps = lam[i] - lam[idx]
    if np.any(np.abs(gaps) < degeneracy_tol * max(1.0, abs(lam[i]))):
        j = idx[np.argmin(np.abs(gaps))]
        raise DegenerateSpectrum(f"lambda_{n} and lambda_{E.index_of_row(j)} coincide")
    value = 2.0 * float(np.sum(O[idx] ** 2 / gaps))
    # mass of W f_n not captured by the retained eigenfunctions
    quad = _Quadrature.uniform(E.oversample * E.galerkin_dim)
    wf = W(quad.x) * E.eigenfunction(n, quad.x)
    missing = max(0.0, float(np.sum(quad.w * wf * wf)) - float(np.sum(O[:k_trunc] ** 2)))
    if k_trunc < lam.size:
        gap = abs(lam[k_trunc] - lam[i])
    else:
        kk = E.galerkin_dim + (1 if E.kind == "dirichlet" else 0)
        gap = abs(kk ** 2 - lam[i])
    return SecondDerivative(value, 2.0 * missing / max(gap, 1e-300), int(idx.size))


@dataclass(frozen=True)
class AsymptoticsReport:
    n: int
    sup_residual: float
    scaled_residual: float


def eigenfunction_asymptotics_check(E: EigenSystem, n: int) -> AsymptoticsReport:
    """Sup distance between f_n and its first-order asymptotic profile."""
    V = E.potential
    x = E.grid
    f = E.eigenfunction(n, x)
    k = abs(n)
    Vc = V.centered_antiderivative(x)
    if E.kind == "dirichlet":
        model = SQ2PI * (np.sin(k * x) - Vc / (2 * k) * np.cos(k * x))
    else:
        if k == 0:
            raise InvalidInput("asymptotic profile undefined for n = 0")
        model = SQ2PI * (np.cos(k * x) + Vc / (2 * k) * np.sin(k * x))
    r = float(np.max(np.abs(f - model)))
    return AsymptoticsReport(n, r, r * k * k)


def sine_overlap(E: EigenSystem, n: int, k: int) -> float:
    """c_{n,k} = sqrt(2/pi) int f_n sin(k x)."""
    if E.kind != "dirichlet":
        raise InvalidInput("sine_overlap requires a Dirichlet system")
    return E.overlap(n, k)


def basis_transform_dirichlet(u, E: EigenSystem) -> State:
    """Sturm coefficients w_n = int u f_n of u given by sine coefficients or interior grid samples.

    `u` may be a State on a positive-index lattice (sine coefficients in the
    orthonormal basis), a 1-D array of sine coefficients, or a dict
    {"grid": samples} with samples at x_j = j pi/(K+1), j = 1..K.
    """
    if E.kind != "dirichlet":
        raise InvalidInput("basis transform requires a Dirichlet system")
    K = E.galerkin_dim
    if isinstance(u, State):
        uhat = np.zeros(K, dtype=complex)
        for n, a in zip(u.lattice.indices, u.values):
            if not 1 <= n[0] <= K:
                if a != 0:
                    raise InvalidInput("input has sine modes beyond the Galerkin space")
                continue
            uhat[n[0] - 1] = a
    elif isinstance(u, Mapping) and "grid" in u:
        g = np.asarray(u["grid"])
        if g.size != K:
            raise InvalidInput("grid samples must have galerkin_dim interior points")
        uhat = np.sqrt(math.pi / (K + 1)) * _dst1(g)
    else:
        uhat = np.zeros(K, dtype=complex)
        a = np.asarray(u)
        if a.size > K:
            raise InvalidInput("more sine coefficients than the Galerkin dimension")
        uhat[: a.size] = a
    s = np.linalg.svd(E.coeffs, compute_uv=False)
    if s.min() < 1e-10:
        raise ArithmeticError("overlap matrix is singular")
    return State(Lattice.interval(1, K), E.coeffs @ uhat)


def inverse_basis_transform_dirichlet(w: State, E: EigenSystem) -> np.ndarray:
    """Sine coefficients of sum_n w_n f_n."""
    K = E.galerkin_dim
    wv = np.zeros(K, dtype=complex)
    for n, a in zip(w.lattice.indices, w.values):
        wv[E.row(n[0])] = a
    return E.coeffs.T @ wv


def _dst1(v: np.ndarray) -> np.ndarray:
    if np.iscomplexobj(v):
        return sfft.dst(v.real, type=1, norm="ortho") + 1j * sfft.dst(v.imag, type=1, norm="ortho")
    return sfft.dst(v, type=1, norm="ortho")


def hs_equivalence_constant(E: EigenSystem, samples: Sequence[np.ndarray], s: float) -> float:
    """max over samples of ||w||_{h^s} / ||u||_{H^s}, with u given by sine coefficients."""
    k = np.arange(1, E.galerkin_dim + 1, dtype=float)
    br = np.sqrt(1 + k * k)
    worst = 0.0
    for uhat in samples:
        u = np.zeros(E.galerkin_dim, dtype=complex)
        u[: len(uhat)] = uhat
        w = E.coeffs @ u
        num = np.sqrt(np.sum(br ** (2 * s) * np.abs(w) ** 2))
        den = np.sqrt(np.sum(br ** (2 * s) * np.abs(u) ** 2))
        worst = max(worst, num / den)
    return float(worst)


# ---------------------------------------------------------------------------
# frequency families


def _squarefree_split(n: int) -> tuple[int, int]:
    """n = a^2 * s with s squarefree; returns (a, s)."""
    if n == 0:
        return 0, 1
    a, s, p = 1, 1, 2
    m = n
    while p * p <= m:
        e = 0
        while m % p == 0:
            m //= p
            e += 1
        a *= p ** (e // 2)
        if e % 2:
            s *= p
        p += 1
    return a, s * m


def exact_sqrt(q: Fraction) -> tuple[Fraction, int]:
    """sqrt(q) = coef * sqrt(s) with s squarefree."""
    if q < 0:
        raise InvalidInput("negative radicand")
    num, den = q.numerator, q.denominator
    a, s = _squarefree_split(num * den)
    return Fraction(a, den), s


@dataclass(frozen=True)
class FrequencyFamily:
    """Real frequencies on a lattice, grouped by numerical equality.

    `exact`, when present, gives each frequency as coef * sqrt(s) with
    rational coef and squarefree integer s; sums are then tested for exact zero.
    """

    lattice: Lattice
    omega: np.ndarray
    tol: float = 1e-9
    exact: tuple | None = None
    flags: tuple[str, ...] = ()
    coercive: bool = True
    group_id: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        w = np.array(self.omega, dtype=float).reshape(-1)
        if w.size != self.lattice.size:
            raise InvalidInput("frequency array does not match lattice")
        if not np.all(np.isfinite(w)):
            raise InvalidInput("frequencies must be finite reals")
        w.setflags(write=False)
        object.__setattr__(self, "omega", w)
        order = np.argsort(w, kind="stable")
        gid = np.empty(w.size, dtype=np.int64)
        g = -1
        prev = None
        for i in order:
            if prev is None or abs(w[i] - prev) > self.tol * max(1.0, abs(w[i])):
                g += 1
                prev = w[i]
            gid[i] = g
        # renumber groups by first lattice member
        remap = {}
        for i in range(w.size):
            remap.setdefault(gid[i], len(remap))
        gid = np.array([remap[x] for x in gid], dtype=np.int64)
        gid.setflags(write=False)
        object.__setattr__(self, "group_id", gid)

    def __getitem__(self, n) -> float:
        return float(self.omega[self.lattice.position(n)])

    @property
    def frequencies(self) -> dict:
        return {n: float(w) for n, w in zip(self.lattice.indices, self.omega)}

    @property
    def n_groups(self) -> int:
        return int(self.group_id.max()) + 1

    @property
    def groups(self) -> list[list[tuple[int, ...]]]:
        out = [[] for _ in range(self.n_groups)]
        for n, g in zip(self.lattice.indices, self.group_id):
            out[g].append(n)
        return out

    def group_of(self, n) -> list[tuple[int, ...]]:
        g = self.group_id[self.lattice.position(n)]
        return [m for m, h in zip(self.lattice.indices, self.group_id) if h == g]

    def group_members(self, n) -> np.ndarray:
        g = self.group_id[self.lattice.position(n)]
        return np.nonzero(self.group_id == g)[0]

    def exact_combination_is_zero(self, coeffs: Sequence[int], positions: Sequence[int]) -> bool | None:
        """Exact test of sum c_j omega_{n_j} = 0, or None when frequencies are not exact."""
        if self.exact is None:
            return None
        acc: dict[int, Fraction] = {}
        for c, p in zip(coeffs, positions):
            coef, s = self.exact[int(p)]
            acc[s] = acc.get(s, Fraction(0)) + int(c) * coef
        return all(v == 0 for v in acc.values())

    def restricted(self, lattice: Lattice) -> "FrequencyFamily":
        pos = self.lattice.positions(lattice.indices)
        ex = None if self.exact is None else tuple(self.exact[p] for p in pos)
        return FrequencyFamily(lattice, self.omega[pos], self.tol, ex, self.flags)

    def with_values(self, omega) -> "FrequencyFamily":
        return FrequencyFamily(self.lattice, omega, self.tol, None, self.flags)


def _as_fraction(x) -> Fraction | None:
    if isinstance(x, (int, np.integer, Fraction)):
        return Fraction(x)
    if isinstance(x, float) and x.is_integer():
        return Fraction(int(x))
    return None


def kg_frequencies(m: float, n_max: int, tol: float = 1e-9) -> FrequencyFamily:
    """omega_n = sqrt(n^2 + m), n = 1..n_max."""
    if m <= -1:
        raise InvalidInput("Klein-Gordon mass must satisfy m > -1")
    lat = Lattice.interval(1, n_max)
    n = np.arange(1, n_max + 1, dtype=float)
    w = np.sqrt(n * n + m)
    mf = _as_fraction(m)
    exact = None
    if mf is not None:
        exact = tuple(exact_sqrt(Fraction(k * k) + mf) for k in range(1, n_max + 1))
    flags = ("integer frequencies: fully resonant",) if m == 0 else ()
    return FrequencyFamily(lat, w, tol, exact, flags)


def nls2_frequencies(Vhat, n_max: int, tol: float = 1e-9) -> FrequencyFamily:
    """omega_n = |n|^2 + Vhat_n on the square lattice |n|_inf <= n_max."""
    lat = Lattice.square(n_max)
    vals = []
    for n in lat.indices:
        v = Vhat(n) if callable(Vhat) else Vhat.get(n, 0.0)
        if isinstance(v, complex) or np.iscomplexobj(v):
            if np.imag(v) != 0:
                raise InvalidInput(f"complex Vhat entry at {n}")
            v = float(np.real(v))
        vals.append(v)
    w = np.array([n[0] ** 2 + n[1] ** 2 + float(v) for n, v in zip(lat.indices, vals)])
    fr = [_as_fraction(v) for v in vals]
    exact = None
    if all(f is not None for f in fr):
        exact = tuple((Fraction(n[0] ** 2 + n[1] ** 2) + f, 1) for n, f in zip(lat.indices, fr))
    return FrequencyFamily(lat, w, tol, exact)


def sturm_frequencies(E, tol: float = 1e-9) -> FrequencyFamily:
    """Frequencies omega_n = lambda_n of a Dirichlet, Neumann or merged periodic system."""
    idx = E.indices
    lat = Lattice(tuple((n,) for n in idx))
    w = np.array([E.eigenvalue(n[0]) for n in lat.indices])
    exact = None
    V = E.dirichlet.potential if isinstance(E, PeriodicEvenSystem) else E.potential
    if not np.any(V.cos_coeffs) and not np.any(V.sin_coeffs):
        exact = tuple((Fraction(n[0] * n[0]), 1) for n in lat.indices)
    return FrequencyFamily(lat, w, tol, exact)
