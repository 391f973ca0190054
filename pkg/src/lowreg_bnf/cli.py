"""Batch experiment runner.

Every subcommand resolves its parameters from built-in defaults, then an
optional config file (JSON, or INI-style ``key = value`` sections), then
command-line flags.  The resolved
parameters and the package version are written next to the outputs.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import __version__
from .dynamics import (IntegrationAbort, ModelSpec, Nonlinearity, initial_state, integrate, kg_polynomial,
                       make_system, scaling_experiment, track_superactions)
from .hamilton import FlowFailure, PolyHamiltonian, QuadraticDiagonal, evaluate, poisson_bracket
from .lattice import InvalidInput, Lattice, State, random_state
from .normalform import NormalFormConfig, _jsonable, birkhoff_normal_form, remainder_scaling, verify_conjugacy
from .resonance import (BootstrapParams, HypothesisFailure, PotentialLaw, ResonanceViolation,
                        bootstrap_weak_to_strong, fit_accumulation, fit_weak_nonresonance, genericity_montecarlo,
                        naive_strong_scan, verify_limited_nonresonance, verify_strong_nonresonance)
from .spectra import (DegenerateSpectrum, Potential, dirichlet_spectrum, kg_frequencies, neumann_spectrum,
                      nls2_frequencies, periodic_spectrum_even, sturm_frequencies)

ENV_OUTPUT = "LOWREG_BNF_OUTPUT"
GLOBAL_KEYS = ("seed", "output", "jobs")
MODELS = {"kg": "KG1D", "nls-dir": "NLS1D_Dir", "nls-per": "NLS1D_Per", "nls2d": "NLS2D_Conv"}


class ConfigError(ValueError):
    pass


class DomainFailure(RuntimeError):
    """A run that completed but whose result is a domain-level failure (exit 1)."""

    def __init__(self, msg: str, payload):
        super().__init__(msg)
        self.payload = payload


# ---------------------------------------------------------------------------
# parameter tables


@dataclass(frozen=True)
class Opt:
    kind: str  # int, float, str, ints, floats, strs, bool
    default: object
    help: str = ""


MODEL_OPTS = {
    "model": Opt("str", "kg", "kg | nls-dir | nls-per | nls2d"),
    "mass": Opt("float", 1.0, "Klein-Gordon mass"),
    "potential": Opt("str", "zero", "zero | cos:a0,a1,... | mode:j[:amp] | path.json | path.csv"),
    "vhat": Opt("str", "zero", "zero | path.json with [[[a, b], value], ...]"),
    "K": Opt("int", 12, "truncation radius"),
    "g_power": Opt("int", None, "nonlinearity y^j (default 2 for kg, 1 for nls)"),
    "g_coeff": Opt("float", 1.0, "nonlinearity coefficient"),
}

COMMANDS = {
    "spectrum": {
        "potential": MODEL_OPTS["potential"],
        "kind": Opt("str", "dirichlet", "dirichlet | neumann | periodic"),
        "n_max": Opt("int", 16),
        "galerkin_dim": Opt("int", None),
        "eigenfunctions": Opt("bool", False, "also write sampled eigenfunctions"),
    },
    "resonance": {
        **{k: MODEL_OPTS[k] for k in ("model", "mass", "potential", "vhat")},
        "frequencies": Opt("str", "auto", "auto | dirichlet | periodic (Sturm models)"),
        "order": Opt("int", 3),
        "range": Opt("int", 20),
        "N_max": Opt("float", math.inf),
        "limited": Opt("float", None, "limited condition with <n_1> <= N"),
    },
    "bootstrap": {
        "mass": MODEL_OPTS["mass"],
        "order": Opt("int", 3),
        "range": Opt("int", 64),
        "mu": Opt("float", 0.0),
        "nu": Opt("float", 1.0),
        "alpha": Opt("float", None, "override the fitted alpha"),
        "gamma": Opt("float", None, "override the fitted gamma"),
    },
    "genericity": {
        "laws": Opt("strs", ["gaussian-fourier", "gaussian-cosine", "uniform-convolution"]),
        "trials": Opt("int", 50),
        "order": Opt("int", 3),
        "range": Opt("int", 12),
        "range_2d": Opt("int", 6, "index range for the 2D law"),
        "s": Opt("float", 2.0),
        "modes": Opt("int", 16),
        "amplitude": Opt("float", 0.01),
        "norm_bound": Opt("float", 0.05),
    },
    "normal-form": {
        "mass": MODEL_OPTS["mass"],
        "K": MODEL_OPTS["K"],
        "g_power": Opt("int", 2),
        "g_coeff": MODEL_OPTS["g_coeff"],
        "r": Opt("int", 5),
        "N": Opt("float", 4.0),
        "N_max": Opt("float", math.inf),
        "flow_tol": Opt("float", 1e-12),
        "samples": Opt("int", 20),
        "halvings": Opt("int", 4),
    },
    "simulate": {
        **MODEL_OPTS,
        "eps": Opt("float", 0.05),
        "r": Opt("int", 5),
        "T": Opt("float", None, "final time (default eps^-(r-p))"),
        "dt": Opt("float", 0.05),
        "samples": Opt("int", 400),
        "support": Opt("int", 4),
        "decay": Opt("float", 1.0),
        "forcing": Opt("bool", False, "record the truncation forcing"),
    },
    "scaling": {
        **MODEL_OPTS,
        "eps": Opt("floats", [0.1, 0.05, 0.025]),
        "r": Opt("int", 5),
        "seeds": Opt("int", 2, "number of seeds per eps"),
        "modes": Opt("int", 4),
        "dt": Opt("float", 0.05),
        "samples": Opt("int", 400),
        "support": Opt("int", 4),
        "K_compare": Opt("int", None, "rerun at this radius and report relative change"),
    },
    "verify": {
        "checks": Opt("strs", ["spectrum", "bracket", "naive", "conjugacy"]),
        "pairs": Opt("int", 10),
    },
}


def _convert(kind: str, value):
    if value is None:
        return None
    try:
        if kind == "int":
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError(value)
            return int(value)
        if kind == "float":
            return float(value)
        if kind == "str":
            if not isinstance(value, str):
                raise ValueError(value)
            return value
        if kind == "bool":
            if isinstance(value, str):
                return value.lower() in ("1", "true", "yes")
            return bool(value)
        if isinstance(value, str):
            value = [v for v in value.split(",") if v]
        if kind == "ints":
            return [int(v) for v in value]
        if kind == "floats":
            return [float(v) for v in value]
        if kind == "strs":
            return [str(v) for v in value]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value {value!r} for a {kind} option") from exc
    raise ConfigError(f"unknown option kind {kind}")


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lowreg-bnf", description="Birkhoff normal form experiments")
    ap.add_argument("--version", action="version", version=f"lowreg-bnf {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, opts in COMMANDS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", help="config file: JSON object or INI sections ([global], [%s])" % name)
        p.add_argument("--seed", type=int)
        p.add_argument("--out", dest="output", help=f"output directory (default ${ENV_OUTPUT}/{name})")
        p.add_argument("--jobs", type=int, help="parallelism degree")
        p.add_argument("--resume", nargs="?", const=True, default=False, metavar="FILE",
                       help="reuse completed outputs; FILE names the enumeration checkpoint")
        for key, o in opts.items():
            if o.kind == "bool":
                p.add_argument(_flag(key), dest=key, action="store_const", const=True, help=o.help)
            else:
                p.add_argument(_flag(key), dest=key, help=o.help)
    return ap


def read_config(path: str) -> dict:
    """JSON object, or INI text whose [global] section holds seed/output/jobs."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    if text.lstrip().startswith("{"):
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"cannot parse config: {exc}") from exc
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    raw = {}
    for sec in cp.sections():
        items = {k.replace("-", "_"): v for k, v in cp.items(sec)}
        if sec == "global":
            raw.update(items)
        else:
            raw[sec] = items
    return raw


def resolve(command: str, ns: argparse.Namespace) -> dict:
    """defaults <- config file <- flags; unknown config keys are rejected."""
    opts = COMMANDS[command]
    cfg = {"seed": 0, "jobs": 1, "output": None}
    params = {k: o.default for k, o in opts.items()}
    if ns.config:
        raw = read_config(ns.config)
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        for k, v in raw.items():
            if k in GLOBAL_KEYS:
                cfg[k] = v
            elif k == command:
                if not isinstance(v, dict):
                    raise ConfigError(f"section {k!r} must be an object")
                for kk, vv in v.items():
                    if kk not in opts:
                        raise ConfigError(f"unknown key {kk!r} in section {command!r}")
                    params[kk] = _convert(opts[kk].kind, vv)
            elif k in COMMANDS:
                continue  # sections for other subcommands may share a file
            else:
                raise ConfigError(f"unknown top-level key {k!r}")
    for k in GLOBAL_KEYS:
        v = getattr(ns, k, None)
        if v is not None:
            cfg[k] = v
    for k, o in opts.items():
        v = getattr(ns, k, None)
        if v is not None:
            params[k] = _convert(o.kind, v)
    cfg["seed"] = _convert("int", cfg["seed"])
    cfg["jobs"] = _convert("int", cfg["jobs"])
    if cfg["jobs"] < 1:
        raise ConfigError("jobs must be >= 1")
    cfg["params"] = params
    return cfg


# ---------------------------------------------------------------------------
# object construction


def parse_potential(text: str) -> Potential:
    if text in ("zero", "", None):
        return Potential.zero()
    if text.startswith("cos:"):
        return Potential.cosine([float(v) for v in text[4:].split(",")], label=text)
    if text.startswith("mode:"):
        parts = text[5:].split(":")
        return Potential.mode(int(parts[0]), "cos", float(parts[1]) if len(parts) > 1 else 1.0)
    if not os.path.exists(text):
        raise ConfigError(f"unknown potential {text!r}")
    if text.endswith(".csv"):
        return Potential.from_csv(text)
    with open(text) as fh:
        return Potential.from_json(fh.read())


def parse_vhat(text: str) -> dict:
    if text in ("zero", "", None):
        return {}
    if not os.path.exists(text):
        raise ConfigError(f"unknown convolution potential {text!r}")
    with open(text) as fh:
        return {tuple(int(c) for c in k): float(v) for k, v in json.load(fh)}


def build_model(P: dict) -> ModelSpec:
    if P["model"] not in MODELS:
        raise ConfigError(f"unknown model {P['model']!r}")
    kind = MODELS[P["model"]]
    j = P["g_power"] if P.get("g_power") is not None else (2 if kind == "KG1D" else 1)
    pot = parse_potential(P["potential"]) if kind in ("NLS1D_Dir", "NLS1D_Per") else None
    vhat = parse_vhat(P["vhat"]) if kind == "NLS2D_Conv" else None
    return ModelSpec(kind, P["K"], mass=P["mass"], potential=pot, vhat=vhat,
                     g=Nonlinearity.power(P["g_coeff"], j))


def frequencies(P: dict):
    model, rng = P["model"], P["range"]
    if model == "kg":
        return kg_frequencies(P["mass"], rng)
    if model == "nls2d":
        return nls2_frequencies(parse_vhat(P["vhat"]), rng)
    V = parse_potential(P["potential"])
    which = P["frequencies"]
    if which == "auto":
        which = "periodic" if model == "nls-per" else "dirichlet"
    if which == "periodic":
        return sturm_frequencies(periodic_spectrum_even(V, rng))
    if which == "dirichlet":
        return sturm_frequencies(dirichlet_spectrum(V, rng))
    raise ConfigError(f"unknown frequency family {which!r}")


# ---------------------------------------------------------------------------
# output helpers


class Output:
    def __init__(self, path: str):
        self.path = path
        os.makedirs(path, exist_ok=True)
        self.files: list[str] = []

    def file(self, name: str) -> str:
        self.files.append(name)
        return os.path.join(self.path, name)

    def json(self, name: str, obj):
        with open(self.file(name), "w") as fh:
            json.dump(_jsonable(obj), fh, sort_keys=True, indent=1)
            fh.write("\n")

    def text(self, name: str, body: str):
        with open(self.file(name), "w") as fh:
            fh.write(body)

    def csv(self, name: str, header: list, rows: list):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([f"{v:.17g}" if isinstance(v, (float, np.floating)) else v for v in row])
        self.text(name, buf.getvalue())


def output_dir(command: str, cfg: dict) -> str:
    if cfg["output"]:
        return cfg["output"]
    return os.path.join(os.environ.get(ENV_OUTPUT, "lowreg_runs"), command)


def resolved_config(command: str, cfg: dict) -> dict:
    return {"command": command, "version": __version__, "seed": cfg["seed"], "jobs": cfg["jobs"],
            "params": cfg["params"]}


# ---------------------------------------------------------------------------
# subcommands


def cmd_spectrum(P, cfg, out: Output, resume: bool):
    V = parse_potential(P["potential"])
    kind = P["kind"]
    if kind == "dirichlet":
        E = dirichlet_spectrum(V, P["n_max"], P["galerkin_dim"])
    elif kind == "neumann":
        E = neumann_spectrum(V, P["n_max"], P["galerkin_dim"])
    elif kind == "periodic":
        pe = periodic_spectrum_even(V, P["n_max"], P["galerkin_dim"])
        rows = [(n, pe.eigenvalue(n)) for n in pe.indices]
        out.csv("spectrum.csv", ["index", "lambda"], rows)
        return 0
    else:
        raise ConfigError(f"unknown spectrum kind {kind!r}")
    out.text("spectrum.csv", E.to_csv())
    if P["eigenfunctions"]:
        out.text("eigenfunctions.json", E.eigenfunctions_json())
    return 0


def cmd_resonance(P, cfg, out: Output, resume: bool):
    omega = frequencies(P)
    ckpt = resume if isinstance(resume, str) else os.path.join(out.path, "checkpoint.json") if resume else None
    if P["limited"] is not None:
        cert = verify_limited_nonresonance(omega, P["order"], P["limited"], P["range"], checkpoint=ckpt)
    else:
        cert = verify_strong_nonresonance(omega, P["order"], P["N_max"], P["range"], checkpoint=ckpt)
    d = cert.to_dict()
    out.json("certificate.json", d)
    rows = [(k, st["n_queries"], st["n_paired"], st["min_divisor"], st["gamma"], st["beta"])
            for k, st in sorted(d["per_order"].items(), key=lambda kv: int(kv[0]))]
    out.csv("per_order.csv", ["order", "queries", "paired", "min_divisor", "gamma", "beta"], rows)
    if cert.violations:
        raise DomainFailure("exact resonances found", {"violations": d["per_order"]})
    return 0


def cmd_bootstrap(P, cfg, out: Output, resume: bool):
    omega = kg_frequencies(P["mass"], P["range"])
    alpha, gamma, info = fit_weak_nonresonance(omega, P["order"], P["mu"], P["range"])
    alpha = P["alpha"] if P["alpha"] is not None else alpha
    gamma = P["gamma"] if P["gamma"] is not None else gamma
    C = fit_accumulation(omega, P["mu"], P["nu"], P["range"])
    params = BootstrapParams(alpha, gamma, P["mu"], C, P["nu"], P["order"])
    rep = bootstrap_weak_to_strong(params, omega, P["range"])
    d = rep.to_dict()
    d["weak_fit"] = info
    out.json("bootstrap.json", d)
    out.csv("sequence.csv", ["r_flat", "beta", "eta"], [(s["r_flat"], s["beta"], s["eta"]) for s in rep.sequence])
    if rep.failures:
        raise DomainFailure("bootstrap bound fails on scanned queries", {"failures": rep.failures})
    return 0


def _genericity_cell(args):
    law, trials, r, rng_, seed = args
    return genericity_montecarlo(law, trials, r, index_range=rng_, seed=seed).to_dict()


def cmd_genericity(P, cfg, out: Output, resume: bool):
    cells = []
    for i, name in enumerate(P["laws"]):
        law = PotentialLaw(name, P["s"], P["modes"], P["amplitude"], P["norm_bound"])
        rng_ = P["range_2d"] if name == "uniform-convolution" else P["range"]
        cells.append((law, P["trials"], P["order"], rng_, cfg["seed"] + i))
    reports = _map(cfg["jobs"], _genericity_cell, cells)
    out.json("genericity.json", {"reports": reports})
    out.csv("genericity.csv", ["law", "trials", "clean", "violations", "near_resonances", "rejections"],
            [(rp["law"]["kind"], rp["trials"], rp["n_clean"], rp["n_violations"], rp["n_near_resonances"],
              rp["rejections"]) for rp in reports])
    bad = [rp["law"]["kind"] for rp in reports if rp["n_violations"]]
    if bad:
        raise DomainFailure("exact resonances in sampled potentials", {"laws": bad})
    return 0


def kg_normal_form(mass: float, K: int, g: Nonlinearity, r: int, N: float, N_max: float = math.inf,
                   flow_tol: float = 1e-12):
    model = ModelSpec("KG1D", K, mass=mass, g=g)
    sysm = make_system(model)
    P = kg_polynomial(model, [model.p])
    cfg = NormalFormConfig(p=model.p, r=r, N=N, N_max=N_max, s=model.sobolev, truncation_radius=K,
                           flow_tol=flow_tol)
    return birkhoff_normal_form(QuadraticDiagonal(sysm.omega), P, cfg)


def cmd_normal_form(P, cfg, out: Output, resume: bool):
    nf = kg_normal_form(P["mass"], P["K"], Nonlinearity.power(P["g_coeff"], P["g_power"]), P["r"], P["N"],
                        P["N_max"], P["flow_tol"])
    nf.to_directory(out.path)
    out.files += ["Q_res.json", "certificate.json", "tau.json"] + [f"chi_{rs}.json" for rs, _ in nf.generators]
    conj = verify_conjugacy(nf, samples=P["samples"], seed=cfg["seed"])
    radii = [0.5 * nf.epsilon0 / 2 ** k for k in range(P["halvings"] + 1)]
    scal = remainder_scaling(nf, radii, seed=cfg["seed"])
    out.json("verification.json", {"conjugacy": conj, "remainder_scaling": scal})
    out.csv("remainder_scaling.csv", ["radius", "grad_norm"], [(t["radius"], t["grad_norm"]) for t in scal["table"]])
    return 0


def cmd_simulate(P, cfg, out: Output, resume: bool):
    model = build_model(P)
    sysm = make_system(model)
    p = model.p
    T = P["T"]
    if T is None:
        if p is None:
            raise ConfigError("T is required for a linear model")
        T = P["eps"] ** (-(P["r"] - p))
    u0 = initial_state(sysm, P["eps"], np.random.default_rng(cfg["seed"]), support=P["support"], decay=P["decay"])
    out.text("initial_state.json", u0.to_json())
    try:
        tr = integrate(sysm, u0, T, P["dt"], samples=P["samples"], track_forcing=P["forcing"])
    except IntegrationAbort as exc:
        out.text("trace.csv", exc.trace.to_csv())
        raise
    out.text("trace.csv", tr.to_csv())
    summ = tr.summary()
    summ["model"] = model.describe()
    summ["superactions"] = track_superactions(tr, p=p, eps=P["eps"])
    out.json("summary.json", summ)
    return 0


def cmd_scaling(P, cfg, out: Output, resume: bool):
    model = build_model(P)
    seeds = [cfg["seed"] + i for i in range(P["seeds"])]
    with _executor(cfg["jobs"]) as ex:
        res = scaling_experiment(model, P["eps"], P["r"], model.p, seeds, modes=P["modes"], dt=P["dt"],
                                 support=P["support"], samples=P["samples"], K_compare=P["K_compare"],
                                 map_fn=ex.map if ex else map)
    res["model"] = model.describe()
    out.json("scaling.json", res)
    cols = ["eps", "seed", "T", "drift"] + (["drift_K2", "rel_change"] if P["K_compare"] else [])
    out.csv("scaling.csv", cols, [[row[c] for c in cols] for row in res["rows"]])
    if res["flagged"]:
        raise DomainFailure("integration aborted in some cells", {"rows": [r for r in res["rows"] if r["aborted"]]})
    return 0


# verify ---------------------------------------------------------------------


def random_sparse_hamiltonian(lattice: Lattice, rng: np.random.Generator, degrees=(3, 4), terms: int = 4):
    """Real polynomial with a few random monomials of the given degrees."""
    idx = lattice.indices
    out = []
    for _ in range(terms):
        deg = int(rng.choice(degrees))
        sigma = tuple(int(s) for s in rng.choice((-1, 1), size=deg))
        n = [idx[int(i)] for i in rng.integers(0, len(idx), size=deg)]
        c = complex(rng.standard_normal(), rng.standard_normal())
        out.append((sigma, n, c))
    return PolyHamiltonian.from_terms(lattice, out)


def bracket_oracle(pairs: int, states: int, seed: int, max_modes: int = 9) -> dict:
    """Max relative error of the symbolic bracket against (i grad H, grad K)."""
    from .hamilton import gradient

    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(pairs):
        K_ = int(rng.integers(2, max_modes + 1))
        lat = Lattice.interval(1, K_)
        H = random_sparse_hamiltonian(lat, rng)
        G = random_sparse_hamiltonian(lat, rng)
        B = poisson_bracket(H, G)
        for _ in range(states):
            u = random_state(lat, 1.0, 0.0, rng)
            ref = float(np.sum(np.real(np.conj(1j * gradient(H, u.values)) * gradient(G, u.values))))
            scale = float(np.linalg.norm(gradient(H, u.values)) * np.linalg.norm(gradient(G, u.values)))
            worst = max(worst, abs(evaluate(B, u) - ref) / max(scale, 1e-300))
    return {"max_relative_error": worst, "pass": worst <= 1e-10}


def _check_spectrum(seed: int) -> dict:
    V = Potential.zero()
    n = np.arange(1, 33)
    ed = dirichlet_spectrum(V, 32, 256)
    en = neumann_spectrum(V, 32, 256)
    err = max(max(abs(ed.eigenvalue(k) - k * k) / k ** 2 for k in n),
              max(abs(en.eigenvalue(-k) - k * k) / k ** 2 for k in n))
    return {"max_relative_error": float(err), "pass": bool(err <= 1e-10)}


def _check_naive(seed: int) -> dict:
    cases = []
    ok = True
    for m, r, rng_ in ((1.0, 3, 6), (0.0, 3, 5), (0.5, 4, 4)):
        omega = kg_frequencies(m, rng_)
        cert = verify_strong_nonresonance(omega, r, index_range=rng_)
        ref = naive_strong_scan(omega, r, index_range=rng_)
        vs = cert.violation_set()
        same_v = vs == ref["violations"]
        same_min = all(cert.per_order[k].min_divisor == ref["min_divisor"][k] for k in ref["min_divisor"])
        ok &= same_v and same_min
        cases.append({"mass": m, "order": r, "range": rng_, "violations": len(vs), "same_violations": same_v,
                      "same_min_divisor": same_min})
    return {"cases": cases, "pass": bool(ok)}


def _check_conjugacy(seed: int) -> dict:
    nf = kg_normal_form(1.0, 6, Nonlinearity.power(1.0, 2), 4, 2.0)
    rep = verify_conjugacy(nf, samples=3, seed=seed, differentials=False)
    return {"max_conjugacy_residual": rep["max_conjugacy_residual"], "max_roundtrip": rep["max_roundtrip"],
            "pass": bool(rep["max_conjugacy_residual"] <= 1e-8 and rep["roundtrip_ok"])}


def cmd_verify(P, cfg, out: Output, resume: bool):
    checks = {"spectrum": _check_spectrum, "naive": _check_naive, "conjugacy": _check_conjugacy,
              "bracket": lambda seed: bracket_oracle(P["pairs"], 5, seed)}
    res = {}
    for name in P["checks"]:
        if name not in checks:
            raise ConfigError(f"unknown check {name!r}")
        res[name] = checks[name](cfg["seed"])
    out.json("verify.json", res)
    failed = [k for k, v in res.items() if not v["pass"]]
    if failed:
        raise DomainFailure("self-checks failed", {"failed": failed})
    return 0


HANDLERS = {"spectrum": cmd_spectrum, "resonance": cmd_resonance, "bootstrap": cmd_bootstrap,
            "genericity": cmd_genericity, "normal-form": cmd_normal_form, "simulate": cmd_simulate,
            "scaling": cmd_scaling, "verify": cmd_verify}


# ---------------------------------------------------------------------------
# parallel cells


class _NullExecutor:
    def __enter__(self):
        return None

    def __exit__(self, *exc):
        return False


def _executor(jobs: int):
    return ProcessPoolExecutor(max_workers=jobs) if jobs > 1 else _NullExecutor()


def _map(jobs: int, fn, cells: list) -> list:
    if jobs <= 1 or len(cells) <= 1:
        return [fn(c) for c in cells]
    with ProcessPoolExecutor(max_workers=min(jobs, len(cells))) as ex:
        return list(ex.map(fn, cells))


# ---------------------------------------------------------------------------
# entry points


def _error_payload(exc: BaseException) -> dict:
    d = {"error": type(exc).__name__, "message": str(exc)}
    for attr in ("query", "payload", "partial"):
        v = getattr(exc, attr, None)
        if v is not None:
            d["object"] = v.to_dict() if hasattr(v, "to_dict") else v
    if isinstance(exc, IntegrationAbort):
        d["object"] = exc.trace.summary()
    return d


def _safe_json(obj):
    try:
        return _jsonable(obj)
    except Exception:  # noqa: BLE001 - best effort for error reports
        return repr(obj)


def run(argv=None) -> int:
    try:
        ns = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    command = ns.command
    try:
        cfg = resolve(command, ns)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    path = output_dir(command, cfg)
    resolved = resolved_config(command, cfg)
    out = Output(path)
    cfg_path = os.path.join(path, "config.json")
    done_path = os.path.join(path, "done.json")
    if ns.resume and os.path.exists(done_path) and os.path.exists(cfg_path):
        with open(cfg_path) as fh:
            if json.load(fh) == json.loads(json.dumps(_jsonable(resolved))):
                print(f"{command}: outputs in {path} are complete; nothing to do")
                return 0
    out.json("config.json", resolved)
    if os.path.exists(done_path):
        os.remove(done_path)
    try:
        code = HANDLERS[command](cfg["params"], cfg, out, ns.resume)
    except (ConfigError, InvalidInput) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        out.json("error.json", _error_payload(exc))
        return 2
    except (ResonanceViolation, FlowFailure, HypothesisFailure, IntegrationAbort, DegenerateSpectrum,
            DomainFailure) as exc:
        print(f"{command} failed: {exc}", file=sys.stderr)
        out.text("error.json", json.dumps(_safe_json(_error_payload(exc)), sort_keys=True, indent=1) + "\n")
        return 1
    out.json("done.json", {"files": sorted(set(out.files) - {"done.json"}), "version": __version__})
    print(f"{command}: wrote {path}")
    return code


def main():
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
