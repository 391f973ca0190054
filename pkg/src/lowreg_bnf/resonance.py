"""Small divisors, effective lower index, non-resonance scans and genericity sampling."""
from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Iterator, Sequence

import numpy as np

from .lattice import InvalidInput, Lattice, as_index, japanese_bracket
from .spectra import (EigenSystem, FrequencyFamily, Potential, dirichlet_spectrum, eigenvalue_second_derivative,
                      nls2_frequencies, periodic_spectrum_even, sturm_frequencies)

NEAR_ZERO = 1e-12


class ResonanceViolation(ArithmeticError):
    """A small divisor that must be nonzero vanishes (or falls below a floor)."""

    def __init__(self, message: str, query: dict | None = None):
        super().__init__(message)
        self.query = query or {}


class HypothesisFailure(ArithmeticError):
    """A hypothesis of the weak-to-strong bootstrap fails on the scanned range."""

    def __init__(self, message: str, query: dict | None = None):
        super().__init__(message)
        self.query = query or {}


# ---------------------------------------------------------------------------
# queries


@dataclass(frozen=True)
class DivisorQuery:
    """A small divisor sum sigma_j omega_{n_j}; `ell` form groups repeated indices."""

    sigma: tuple[int, ...]
    n: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        if len(self.sigma) != len(self.n):
            raise InvalidInput("sign vector and index tuple have different lengths")
        if any(s not in (-1, 1) for s in self.sigma):
            raise InvalidInput("signs must be +1 or -1")
        object.__setattr__(self, "sigma", tuple(int(s) for s in self.sigma))
        object.__setattr__(self, "n", tuple(as_index(m) for m in self.n))

    @classmethod
    def from_sigma(cls, sigma: Sequence[int], n: Sequence) -> "DivisorQuery":
        return cls(tuple(sigma), tuple(n))

    @classmethod
    def from_ell(cls, ell: Sequence[int], n: Sequence) -> "DivisorQuery":
        idx = [as_index(m) for m in n]
        if len(ell) != len(idx):
            raise InvalidInput("coefficient and index tuples have different lengths")
        if len(set(idx)) != len(idx):
            raise InvalidInput("indices must be pairwise distinct")
        if any(int(c) == 0 for c in ell):
            raise InvalidInput("coefficients must be nonzero")
        sig, nn = [], []
        for c, m in zip(ell, idx):
            sig += [1 if c > 0 else -1] * abs(int(c))
            nn += [m] * abs(int(c))
        return cls(tuple(sig), tuple(nn))

    @property
    def order(self) -> int:
        return len(self.sigma)

    def to_ell(self) -> tuple[tuple[int, ...], tuple[tuple[int, ...], ...]]:
        """Rearranged form: distinct indices with their net nonzero coefficients."""
        acc: dict = {}
        for s, m in zip(self.sigma, self.n):
            acc[m] = acc.get(m, 0) + s
        items = sorted((m, c) for m, c in acc.items() if c != 0)
        return tuple(c for _, c in items), tuple(m for m, _ in items)

    def to_dict(self) -> dict:
        return {"sigma": list(self.sigma), "n": [list(m) for m in self.n]}


def _query(q, n=None) -> DivisorQuery:
    if isinstance(q, DivisorQuery):
        return q
    return DivisorQuery.from_sigma(q, n)


def small_divisor(omega: FrequencyFamily, q, n=None) -> float:
    """sum_j sigma_j omega_{n_j}."""
    q = _query(q, n)
    return float(sum(s * omega[m] for s, m in zip(q.sigma, q.n)))


def kappa(omega: FrequencyFamily, sigma: Sequence[int], n: Sequence) -> float:
    """min <n_j> over j whose frequency group carries a nonzero signed sum (inf if none)."""
    if len(sigma) != len(n):
        raise InvalidInput("sign vector and index tuple have different lengths")
    g = [omega.group_id[omega.lattice.position(m)] for m in n]
    tally: dict = {}
    for s, h in zip(sigma, g):
        tally[h] = tally.get(h, 0) + s
    vals = [japanese_bracket(as_index(m)) for m, h in zip(n, g) if tally[h] != 0]
    return min(vals) if vals else math.inf


def is_paired(omega: FrequencyFamily, sigma: Sequence[int], n: Sequence) -> bool:
    """Even arity and equal (+)/(-) tallies in every frequency group."""
    if len(sigma) % 2:
        return False
    return math.isinf(kappa(omega, sigma, n))


def kappa_rows(omega: FrequencyFamily, rows: np.ndarray) -> np.ndarray:
    """Vectorized kappa for slot rows (slot = 2*pos + (sigma+1)/2)."""
    rows = np.asarray(rows, dtype=np.int64)
    if rows.size == 0:
        return np.zeros(rows.shape[0])
    pos, sig = rows >> 1, 2 * (rows & 1) - 1
    G = omega.group_id[pos]
    same = G[:, :, None] == G[:, None, :]
    S = np.sum(same * sig[:, None, :], axis=2)
    br = omega.lattice.brackets()[pos]
    return np.min(np.where(S != 0, br, np.inf), axis=1)


def divisor_rows(omega: FrequencyFamily, rows: np.ndarray) -> np.ndarray:
    pos, sig = rows >> 1, 2 * (rows & 1) - 1
    return np.sum(sig * omega.omega[pos], axis=1)


def exact_divisor(omega: FrequencyFamily, row) -> float:
    """|sum sigma omega| over a slot row, correctly rounded."""
    return abs(math.fsum(float(2 * (sl & 1) - 1) * float(omega.omega[sl >> 1]) for sl in row))


def _rows_to_query(omega: FrequencyFamily, row) -> DivisorQuery:
    idx = omega.lattice.indices
    return DivisorQuery(tuple(int(2 * (s & 1) - 1) for s in row), tuple(idx[s >> 1] for s in row))


# ---------------------------------------------------------------------------
# enumeration


def combinations_with_replacement(S: int, r: int, chunk: int = 1_000_000) -> Iterator[np.ndarray]:
    """Sorted r-tuples from range(S) in lexicographic order, in array chunks."""
    if r == 0 or S == 0:
        return
    if r == 1:
        yield np.arange(S, dtype=np.int64)[:, None]
        return
    for prev in combinations_with_replacement(S, r - 1, chunk):
        start = 0
        while start < prev.shape[0]:
            last = prev[start:, -1]
            counts = S - last
            stop = start + max(1, int(np.searchsorted(np.cumsum(counts), chunk)))
            p = prev[start:stop]
            c = counts[: stop - start]
            rep = np.repeat(p, c, axis=0)
            offs = np.arange(rep.shape[0]) - np.repeat(np.cumsum(c) - c, c)
            yield np.concatenate([rep, (np.repeat(p[:, -1], c) + offs)[:, None]], axis=1)
            start = stop


def _slots_for_range(omega: FrequencyFamily, index_range: int | None) -> np.ndarray:
    """Slot ids of lattice positions with |n|_inf <= index_range."""
    pos = np.array([i for i, n in enumerate(omega.lattice.indices)
                    if index_range is None or max(abs(c) for c in n) <= index_range], dtype=np.int64)
    return np.sort(np.concatenate([2 * pos, 2 * pos + 1]))


def _exact_zero_rows(omega: FrequencyFamily, rows: np.ndarray) -> np.ndarray:
    out = np.zeros(rows.shape[0], dtype=bool)
    for i, row in enumerate(rows):
        pos, sig = row >> 1, 2 * (row & 1) - 1
        out[i] = bool(omega.exact_combination_is_zero(sig.tolist(), pos.tolist()))
    return out


def _classify_zeros(omega: FrequencyFamily, rows: np.ndarray, div: np.ndarray, r: int):
    """(exact zeros, numerical near-resonances) masks."""
    scale = max(float(np.max(np.abs(omega.omega))), 1.0)
    cand = np.abs(div) < max(1e-6 * scale, NEAR_ZERO * r * scale)
    exact = np.zeros(div.size, dtype=bool)
    near = np.zeros(div.size, dtype=bool)
    if not np.any(cand):
        return exact, near
    idx = np.nonzero(cand)[0]
    if omega.exact is not None:
        exact[idx] = _exact_zero_rows(omega, rows[idx])
    else:
        near[idx] = np.abs(div[idx]) < NEAR_ZERO * r * scale
    return exact, near


def fit_power_law(x: np.ndarray, minima: np.ndarray) -> tuple[float, float]:
    """(gamma, beta) with minima >= gamma * x^-beta; beta from a log-log least-squares fit, clamped at 0."""
    x = np.asarray(x, float)
    m = np.asarray(minima, float)
    if x.size == 0:
        return math.nan, math.nan
    beta = 0.0
    if x.size >= 2 and np.ptp(np.log(x)) > 0:
        slope = np.polyfit(np.log(x), np.log(m), 1)[0]
        beta = max(0.0, -float(slope))
    gamma = float(np.min(m * x ** beta))
    return gamma, beta


def _bucket_minima(keys: np.ndarray, vals: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    k = np.round(keys, 9)
    uniq, inv = np.unique(k, return_inverse=True)
    mins = np.full(uniq.size, np.inf)
    np.minimum.at(mins, inv, vals)
    return uniq, mins


# ---------------------------------------------------------------------------
# certificates


@dataclass
class OrderStats:
    order: int
    n_queries: int = 0
    n_paired: int = 0
    n_skipped_kappa: int = 0
    min_divisor: float = math.inf
    min_query: dict | None = None
    gamma: float = math.nan
    beta: float = math.nan
    worst_query: dict | None = None
    worst_divisor: float = math.nan
    buckets: list = field(default_factory=list)
    violations: list = field(default_factory=list)
    near_resonances: list = field(default_factory=list)


@dataclass
class NonResonanceCertificate:
    kind: str
    order: int
    N_max: float
    index_range: int | None
    per_order: dict
    caveat: str = ""

    @property
    def violations(self) -> list:
        return [v for st in self.per_order.values() for v in st.violations]

    def violation_set(self) -> set:
        """Violations as sorted ((n, sigma), ...) keys, the format of `naive_strong_scan`."""
        return {tuple(sorted((tuple(m), s) for m, s in zip(v["n"], v["sigma"]))) for v in self.violations}

    @property
    def near_resonances(self) -> list:
        return [v for st in self.per_order.values() for v in st.near_resonances]

    @property
    def paired_count(self) -> int:
        return sum(st.n_paired for st in self.per_order.values())

    @property
    def valid(self) -> bool:
        return not self.violations

    @property
    def min_divisor(self) -> float:
        return min((st.min_divisor for st in self.per_order.values()), default=math.inf)

    def gamma(self, r: int) -> float:
        return self.per_order[r].gamma

    def beta(self, r: int) -> float:
        return self.per_order[r].beta

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "order": self.order, "N_max": _num(self.N_max), "index_range": self.index_range,
             "caveat": self.caveat, "valid": self.valid, "paired_count": self.paired_count,
             "n_violations": len(self.violations), "n_near_resonances": len(self.near_resonances),
             "per_order": {str(k): _clean(asdict(v)) for k, v in sorted(self.per_order.items())}}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)


def _num(x):
    if isinstance(x, float) and (math.isinf(x) or math.isnan(x)):
        return repr(x)
    return x


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return _num(float(obj))
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _stats_from_dict(d: dict) -> OrderStats:
    def f(x):
        return float(x) if isinstance(x, str) else x
    d = dict(d)
    for k in ("min_divisor", "gamma", "beta", "worst_divisor"):
        d[k] = f(d[k])
    return OrderStats(**d)


def _scan_order(omega: FrequencyFamily, r: int, N_max: float, slots: np.ndarray, limited: bool,
                N: float | None = None) -> OrderStats:
    st = OrderStats(r)
    br = omega.lattice.brackets()
    keys_all, vals_all = [], []
    best = (math.inf, None)
    for combo in combinations_with_replacement(slots.size, r):
        rows = slots[combo]
        if limited:
            pos = rows >> 1
            # no index may carry both signs (ell-form with |ell|_1 = r)
            both = np.zeros(rows.shape[0], dtype=bool)
            for i in range(r):
                for j in range(i + 1, r):
                    both |= (pos[:, i] == pos[:, j]) & (rows[:, i] != rows[:, j])
            rows = rows[~both]
            low = np.min(br[rows >> 1], axis=1)
            rows = rows[low <= N]
            key = np.min(br[rows >> 1], axis=1)
        else:
            key = kappa_rows(omega, rows)
            paired = np.isinf(key)
            st.n_paired += int(paired.sum())
            over = ~paired & (key > N_max)
            st.n_skipped_kappa += int(over.sum())
            keep = ~paired & ~over
            rows, key = rows[keep], key[keep]
        if rows.shape[0] == 0:
            continue
        div = divisor_rows(omega, rows)
        exact, near = _classify_zeros(omega, rows, div, r)
        for i in np.nonzero(exact)[0]:
            st.violations.append({**_rows_to_query(omega, rows[i]).to_dict(), "divisor": float(div[i])})
        for i in np.nonzero(near)[0]:
            st.near_resonances.append({**_rows_to_query(omega, rows[i]).to_dict(), "divisor": float(div[i])})
        ok = ~exact & ~near
        st.n_queries += int(rows.shape[0])
        a = np.abs(div[ok])
        if a.size:
            # correctly rounded divisors for the near-minimal rows, so the reported minimum
            # does not depend on summation order
            amin = float(a.min())
            for i in np.nonzero(a <= amin * (1 + 1e-9))[0]:
                v = exact_divisor(omega, rows[ok][i])
                if v < best[0]:
                    best = (v, rows[ok][i])
            keys_all.append(key[ok])
            vals_all.append(a)
    if best[1] is not None:
        st.min_divisor = best[0]
        st.min_query = _rows_to_query(omega, best[1]).to_dict()
    if keys_all:
        k, m = _bucket_minima(np.concatenate(keys_all), np.concatenate(vals_all))
        st.buckets = [[float(a), float(b)] for a, b in zip(k, m)]
        if limited:
            st.gamma, st.beta = float(np.min(m)), 0.0
        else:
            st.gamma, st.beta = fit_power_law(k, m)
        # locate the binding query
        target = st.gamma
        st.worst_divisor = target
        kb = k[np.argmin(m * k ** st.beta)]
        st.worst_query = {"kappa": float(kb), "bucket_min": float(m[np.argmin(m * k ** st.beta)])}
    return st


def _checkpoint_load(path: str | None, header: dict) -> dict:
    if not path or not os.path.exists(path):
        return {}
    with open(path) as fh:
        data = json.load(fh)
    if data.get("header") != header:
        raise InvalidInput("checkpoint belongs to a different scan")
    return {int(k): _stats_from_dict(v) for k, v in data.get("orders", {}).items()}


def _checkpoint_save(path: str | None, header: dict, done: dict):
    if not path:
        return
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump({"header": header, "orders": {str(k): _clean(asdict(v)) for k, v in sorted(done.items())}},
                  fh, sort_keys=True)
    os.replace(tmp, path)


def _header(kind, omega, r, N, index_range):
    return {"kind": kind, "r": r, "N": _num(float(N)), "index_range": index_range,
            "omega_digest": [round(float(x), 12) for x in omega.omega[:8]], "size": omega.lattice.size}


def verify_strong_nonresonance(omega: FrequencyFamily, r: int, N_max: float = math.inf,
                               index_range: int | None = None, checkpoint: str | None = None
                               ) -> NonResonanceCertificate:
    """Scan all (sigma, n) of arity <= r with kappa <= N_max, skipping paired monomials."""
    if r < 1:
        raise InvalidInput("order must be >= 1")
    slots = _slots_for_range(omega, index_range)
    header = _header("strong", omega, r, N_max, index_range)
    done = _checkpoint_load(checkpoint, header)
    for k in range(1, r + 1):
        if k in done:
            continue
        done[k] = _scan_order(omega, k, N_max, slots, limited=False)
        _checkpoint_save(checkpoint, header, done)
    return NonResonanceCertificate("strong", r, N_max, index_range, dict(sorted(done.items())))


def verify_limited_nonresonance(omega: FrequencyFamily, r: int, N: float,
                                index_range: int | None = None, checkpoint: str | None = None
                                ) -> NonResonanceCertificate:
    """Uniform lower bound over ell-form divisors with |ell|_1 <= r and <n_1> <= N."""
    slots = _slots_for_range(omega, index_range)
    header = _header("limited", omega, r, N, index_range)
    done = _checkpoint_load(checkpoint, header)
    for k in range(1, r + 1):
        if k in done:
            continue
        done[k] = _scan_order(omega, k, math.inf, slots, limited=True, N=N)
        _checkpoint_save(checkpoint, header, done)
    caveat = (f"uniform bound certified only for indices with |n| <= {index_range}; "
              "the condition also constrains unboundedly large n_r")
    return NonResonanceCertificate("limited", r, N, index_range, dict(sorted(done.items())), caveat)


def naive_strong_scan(omega: FrequencyFamily, r: int, N_max: float = math.inf,
                      index_range: int | None = None) -> dict:
    """Reference enumerator over ordered (sigma, n) tuples; returns violations and per-order minima."""
    import itertools

    idx = [n for n in omega.lattice.indices if index_range is None or max(abs(c) for c in n) <= index_range]
    out = {"violations": set(), "min_divisor": {}}
    for k in range(1, r + 1):
        best = math.inf
        for n in itertools.product(idx, repeat=k):
            for sigma in itertools.product((-1, 1), repeat=k):
                kap = kappa(omega, sigma, n)
                if math.isinf(kap) or kap > N_max:
                    continue
                key = tuple(sorted(zip(n, sigma)))
                div = math.fsum(s * omega[m] for s, m in zip(sigma, n))
                pos = [omega.lattice.position(m) for m in n]
                if abs(div) < 1e-6 and omega.exact is not None and omega.exact_combination_is_zero(sigma, pos):
                    out["violations"].add(key)
                    continue
                best = min(best, abs(div))
        out["min_divisor"][k] = best
    return out


# ---------------------------------------------------------------------------
# weak non-resonance and the bootstrap


@dataclass(frozen=True)
class BootstrapParams:
    alpha: float
    gamma: float
    mu: float
    C: float
    nu: float
    r: int

    def __post_init__(self):
        for name in ("alpha", "gamma", "C", "nu"):
            if not getattr(self, name) > 0:
                raise InvalidInput(f"{name} must be positive")
        if self.r < 1:
            raise InvalidInput("r must be >= 1")


def _ell_rows(omega: FrequencyFamily, r: int, index_range: int | None, N_max: float):
    """All ell-form divisors with |ell|_1 <= r, <n_1> <= N_max as slot rows (arity = |ell|_1)."""
    slots = _slots_for_range(omega, index_range)
    br = omega.lattice.brackets()
    for k in range(1, r + 1):
        for combo in combinations_with_replacement(slots.size, k):
            rows = slots[combo]
            pos = rows >> 1
            both = np.zeros(rows.shape[0], dtype=bool)
            for i in range(k):
                for j in range(i + 1, k):
                    both |= (pos[:, i] == pos[:, j]) & (rows[:, i] != rows[:, j])
            rows = rows[~both]
            b = br[rows >> 1]
            rows = rows[np.min(b, axis=1) <= N_max]
            if rows.shape[0]:
                yield rows


def _dist_Z(x: np.ndarray) -> np.ndarray:
    return np.abs(x - np.round(x))


def weak_divisor_rows(omega: FrequencyFamily, rows: np.ndarray, mu: float, r: int) -> np.ndarray:
    """min over h in [-r, r] of dist(sum ell omega + h mu, Z)."""
    div = divisor_rows(omega, rows)
    return np.min(np.stack([_dist_Z(div + h * mu) for h in range(-r, r + 1)]), axis=0)


def fit_weak_nonresonance(omega: FrequencyFamily, r: int, mu: float = 0.0, index_range: int | None = None,
                          N_max: float = math.inf) -> tuple[float, float, dict]:
    """Fitted (alpha, gamma) for the weak bound dist >= gamma <n_r>^-alpha, plus the worst query."""
    br = omega.lattice.brackets()
    keys, vals = [], []
    worst = (math.inf, None)
    for rows in _ell_rows(omega, r, index_range, N_max):
        d = weak_divisor_rows(omega, rows, mu, r)
        top = np.max(br[rows >> 1], axis=1)
        if np.any(d == 0):
            i = int(np.nonzero(d == 0)[0][0])
            raise HypothesisFailure("weak non-resonance fails: integer combination",
                                    _rows_to_query(omega, rows[i]).to_dict())
        keys.append(top)
        vals.append(d)
        i = int(np.argmin(d))
        if d[i] < worst[0]:
            worst = (float(d[i]), rows[i])
    keys, vals = np.concatenate(keys), np.concatenate(vals)
    k, m = _bucket_minima(keys, vals)
    _, alpha = fit_power_law(k, m)
    alpha = max(alpha, 1e-6)
    gamma = float(np.min(vals * keys ** alpha))  # unrounded keys: the bound holds query by query
    info = {"min": worst[0], "query": _rows_to_query(omega, worst[1]).to_dict() if worst[1] is not None else None}
    return alpha, gamma, info


def fit_accumulation(omega: FrequencyFamily, mu: float, nu: float, index_range: int | None = None) -> float:
    """Smallest C with dist(omega_n - mu, Z) <= C <n>^-nu on the scanned range."""
    pos = _slots_for_range(omega, index_range)[0::2] >> 1
    br = omega.lattice.brackets()[pos]
    return float(np.max(br ** nu * _dist_Z(omega.omega[pos] - mu)))


def bootstrap_step(beta: float, eta: float, p: BootstrapParams) -> dict:
    """One induction step: the two branches of the dichotomy and their combination."""
    case1 = (beta, eta / 2)
    case2 = (p.alpha * beta / p.nu, p.gamma * (eta / (2 * p.C * p.r)) ** (p.alpha / p.nu))
    return {"case1": case1, "case2": case2, "combined": (max(case1[0], case2[0]), min(case1[1], case2[1]))}


@dataclass
class BootstrapReport:
    params: dict
    sequence: list
    beta: float
    eta: float
    n_checked: int
    min_ratio: float
    failures: list
    case_counts: list

    def to_dict(self) -> dict:
        return _clean(asdict(self))


def bootstrap_weak_to_strong(params: BootstrapParams, omega: FrequencyFamily, index_range: int | None = None,
                             N_max: float = math.inf) -> BootstrapReport:
    """Weak non-resonance + accumulation => |sum ell omega| >= eta <n_1>^-beta, verified on the range."""
    p = params
    br = omega.lattice.brackets()
    all_rows = list(_ell_rows(omega, p.r, index_range, N_max))
    # hypotheses first
    for rows in all_rows:
        d = weak_divisor_rows(omega, rows, p.mu, p.r)
        top = np.max(br[rows >> 1], axis=1)
        bad = d < p.gamma * top ** (-p.alpha) * (1 - 1e-12)
        if np.any(bad):
            i = int(np.nonzero(bad)[0][0])
            raise HypothesisFailure("weak non-resonance violated", {**_rows_to_query(omega, rows[i]).to_dict(),
                                                                    "distance": float(d[i])})
    C_needed = fit_accumulation(omega, p.mu, p.nu, index_range)
    if C_needed > p.C * (1 + 1e-12):
        raise HypothesisFailure("accumulation bound violated", {"C_needed": C_needed, "C": p.C})
    seq = [{"r_flat": 1, "beta": p.alpha, "eta": p.gamma}]
    beta, eta = p.alpha, p.gamma
    case_counts = []
    for rf in range(1, p.r):
        st = bootstrap_step(beta, eta, p)
        # classify scanned queries of length > rf by the dichotomy
        c1 = c2 = 0
        for rows in all_rows:
            b = np.sort(br[rows >> 1], axis=1)
            if b.shape[1] <= rf:
                continue
            lhs = 2 * C_needed * p.r * b[:, rf] ** (-p.nu)
            rhs = eta * b[:, 0] ** (-beta)
            c1 += int(np.sum(lhs <= rhs))
            c2 += int(np.sum(lhs > rhs))
        case_counts.append({"r_flat": rf, "case1": c1, "case2": c2})
        beta, eta = st["combined"]
        seq.append({"r_flat": rf + 1, "beta": beta, "eta": eta,
                    "case1": list(st["case1"]), "case2": list(st["case2"])})
    n_checked, min_ratio, failures = 0, math.inf, []
    for rows in all_rows:
        div = np.abs(divisor_rows(omega, rows))
        low = np.min(br[rows >> 1], axis=1)
        bound = eta * low ** (-beta)
        ratio = div / bound
        n_checked += rows.shape[0]
        min_ratio = min(min_ratio, float(np.min(ratio)))
        for i in np.nonzero(ratio < 1)[0][:20]:
            failures.append({**_rows_to_query(omega, rows[i]).to_dict(), "divisor": float(div[i])})
    return BootstrapReport(asdict(p), seq, beta, eta, n_checked, min_ratio, failures, case_counts)


# ---------------------------------------------------------------------------
# partial fractions and second-derivative separation


def partial_fraction_divisor(ell: Sequence[int], n: Sequence[int]) -> tuple[int, Fraction]:
    """Admissible j in [1, 5 r] maximizing |sum ell_k / (4 n_k^2 - j^2)|, exactly."""
    ell = [int(c) for c in ell]
    n = [int(m) for m in n]
    if len(ell) != len(n) or not ell:
        raise InvalidInput("coefficient and index tuples must be nonempty and of equal length")
    if any(c == 0 for c in ell):
        raise InvalidInput("coefficients must be nonzero")
    if any(m < 0 for m in n) or any(a >= b for a, b in zip(n, n[1:])):
        raise InvalidInput("indices must satisfy 0 <= n_1 < ... < n_r")
    banned = set(n) | {2 * m for m in n}
    best = None
    for j in range(1, 5 * len(n) + 1):
        if j in banned:
            continue
        v = sum(Fraction(c, 4 * m * m - j * j) for c, m in zip(ell, n))
        if best is None or abs(v) > abs(best[1]):
            best = (j, v)
    if best is None:
        raise RuntimeError("no admissible j")
    return best[0], abs(best[1])


def second_derivative_separation(E_dir: EigenSystem, E_neu: EigenSystem, ell: Sequence[int],
                                 n: Sequence[int]) -> tuple[int, float]:
    """j from the partial fraction search and the second derivative of sum ell_k (lambda_{n_k} + lambda_{-n_k})
    in the direction cos(j x)."""
    j, _ = partial_fraction_divisor(ell, n)
    W = Potential.mode(j, "cos")
    total = 0.0
    for c, m in zip(ell, n):
        if m == 0:
            total += 2 * c * eigenvalue_second_derivative(E_neu, 0, W).value
        else:
            total += c * (eigenvalue_second_derivative(E_dir, m, W).value
                          + eigenvalue_second_derivative(E_neu, -m, W).value)
    return j, float(total)


# ---------------------------------------------------------------------------
# genericity sampling


LAWS = ("gaussian-fourier", "gaussian-cosine", "uniform-convolution")


@dataclass(frozen=True)
class PotentialLaw:
    """Random potential law.

    `amplitude` scales the Gaussian coefficients and `modes` truncates the
    expansion; `norm_bound` conditions on ||V||_{H^1} < norm_bound by rejection.
    """

    kind: str
    s: float = 2.0
    modes: int = 16
    amplitude: float = 1.0
    norm_bound: float | None = None

    def __post_init__(self):
        if self.kind not in LAWS:
            raise InvalidInput(f"unknown law {self.kind!r}")

    def _draw(self, rng: np.random.Generator):
        M = self.modes
        if self.kind == "uniform-convolution":
            out = {}
            for a in range(-M, M + 1):
                for b in range(-M, M + 1):
                    w = self.amplitude * japanese_bracket((a, b)) ** (-self.s)
                    out[(a, b)] = float(rng.uniform(-w, w))
            return out
        k = np.arange(0, M + 1, dtype=float)
        w = self.amplitude * np.sqrt(1 + k * k) ** (-self.s)
        a = rng.standard_normal(M + 1) * w
        if self.kind == "gaussian-cosine":
            return Potential.cosine(a, label=self.kind)
        b = -rng.standard_normal(M + 1) * w  # sin(n x) with n <= -1 is -sin(|n| x)
        b[0] = 0.0
        return Potential.fourier(a, b, label=self.kind)

    def norm(self, V) -> float:
        if isinstance(V, dict):
            return float(math.sqrt(sum(japanese_bracket(n) ** 2 * v * v for n, v in V.items())))
        return V.H1_norm

    def sample(self, rng: np.random.Generator, max_rejections: int = 1000):
        rejections = 0
        while True:
            V = self._draw(rng)
            if self.norm_bound is None or self.norm(V) < self.norm_bound:
                return V, rejections
            rejections += 1
            if rejections > max_rejections:
                raise InvalidInput(f"conditioning failed: {rejections} rejections above norm_bound={self.norm_bound}")


@dataclass
class GenericityReport:
    law: dict
    trials: int
    r: int
    N: float
    index_range: int
    seed: int
    n_clean: int = 0
    n_violations: int = 0
    n_near_resonances: int = 0
    rejections: int = 0
    min_divisors: list = field(default_factory=list)
    norms: list = field(default_factory=list)
    worst: list = field(default_factory=list)

    @property
    def fraction_clean(self) -> float:
        return self.n_clean / self.trials if self.trials else math.nan

    def quantiles(self) -> dict:
        if not self.min_divisors:
            return {}
        q = np.quantile(self.min_divisors, [0.0, 0.1, 0.5, 0.9, 1.0])
        return {k: float(v) for k, v in zip(("min", "q10", "median", "q90", "max"), q)}

    def to_dict(self) -> dict:
        d = _clean(asdict(self))
        d["fraction_clean"] = _num(self.fraction_clean)
        d["quantiles"] = self.quantiles()
        return d


def genericity_montecarlo(law: PotentialLaw, trials: int, r: int, N: float = math.inf, index_range: int = 12,
                          seed: int = 0) -> GenericityReport:
    """Sample potentials, compute frequencies and run the matching verifier."""
    rng = np.random.default_rng(seed)
    rep = GenericityReport(asdict(law), trials, r, N, index_range, seed)
    for t in range(trials):
        V, rej = law.sample(rng)
        rep.rejections += rej
        if law.kind == "uniform-convolution":
            omega = nls2_frequencies(V, index_range)
            cert = verify_strong_nonresonance(omega, r, N, index_range)
        elif law.kind == "gaussian-fourier":
            omega = sturm_frequencies(dirichlet_spectrum(V, index_range))
            cert = verify_strong_nonresonance(omega, r, N, index_range)
        else:
            omega = sturm_frequencies(periodic_spectrum_even(V, index_range))
            cert = verify_limited_nonresonance(omega, r, N if math.isfinite(N) else index_range, index_range)
        nv, nn = len(cert.violations), len(cert.near_resonances)
        rep.n_violations += nv
        rep.n_near_resonances += nn
        rep.n_clean += int(nv == 0 and nn == 0)
        rep.min_divisors.append(cert.min_divisor)
        rep.norms.append(law.norm(V))
    order = np.argsort(rep.min_divisors)[:3]
    rep.worst = [{"trial": int(i), "min_divisor": rep.min_divisors[i], "norm": rep.norms[i]} for i in order]
    return rep
