"""Command-line driver.

Configuration is an INI file with sections ``model``, ``geometry``, ``chain``,
``phi``, ``reconstruct`` and ``output``; ``--override section.key=value``
and ``--seed`` take precedence. Every artifact embeds the resolved
configuration. Exit codes: 0 success, 2 configuration, 3 capacity,
4 coverage, 5 validation failure, 6 singular three-body term.
"""
from __future__ import annotations

import argparse
import configparser
import json
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from . import cg, diagnostics, oracle, sampler
from .errors import CGMCError, ConfigurationError, ValidationFailure
from .lattice import LatticeGeometry, all_coarse_configs, coarse_map
from .potentials import ModelSpec, h_long
from .reconstruct import ReconstructionPlan, local_reconstruct, reconstruct_many, roundtrip_check

DEFAULTS = {
    "model": {"K": "0.3", "beta": "1.0", "kernel": "none", "L": "4"},
    "geometry": {"N": "8", "q": "2"},
    "chain": {"steps": "200000", "burn_in": "1000", "thin": "10", "seed": "0",
              "observables": "magnetization,energy", "exchange": "false"},
    "phi": {"mode": "exact", "steps": "1000000", "burn_in": "", "seed": "", "table": ""},
    "reconstruct": {"exactness": "exact", "cell_steps": "2000", "draws": "1", "eta": "",
                    "roundtrip": "false"},
    "output": {"directory": ".", "formats": "csv,json"},
}


class Config:
    """Resolved configuration with typed accessors and field-level diagnostics."""

    def __init__(self, parser: configparser.ConfigParser, source: str | None, text: str = ""):
        self.p = parser
        self.source = source
        self._text = text

    @classmethod
    def load(cls, path: str | None, overrides=(), seed: int | None = None) -> "Config":
        p = configparser.ConfigParser(interpolation=None)
        p.optionxform = str
        p.read_dict(DEFAULTS)
        text = ""
        if path:
            try:
                text = Path(path).read_text()
            except OSError as exc:
                raise ConfigurationError(f"cannot read config {path}: {exc}") from None
            try:
                p.read_string(text, source=path)
            except configparser.Error as exc:
                raise ConfigurationError(f"{path}: {exc}") from None
            for sec in p.sections():
                if sec not in DEFAULTS:
                    raise ConfigurationError(f"{path}: unknown section [{sec}]")
                for key in p[sec]:
                    if key not in DEFAULTS[sec]:
                        line = cls._line(text, sec, key)
                        raise ConfigurationError(f"{path}:{line}: unknown key {sec}.{key}")
        for item in overrides:
            if "=" not in item or "." not in item.split("=", 1)[0]:
                raise ConfigurationError(f"override {item!r} must look like section.key=value")
            lhs, val = item.split("=", 1)
            sec, key = lhs.strip().split(".", 1)
            if sec not in DEFAULTS or key not in DEFAULTS[sec]:
                raise ConfigurationError(f"override names unknown field {sec}.{key}")
            p[sec][key] = val.strip()
        if seed is not None:
            p["chain"]["seed"] = str(seed)
            p["phi"]["seed"] = str(seed)
        return cls(p, path, text)

    @staticmethod
    def _line(text: str, sec: str, key: str) -> int | str:
        cur = None
        for i, ln in enumerate(text.splitlines(), 1):
            s = ln.strip()
            if s.startswith("[") and s.endswith("]"):
                cur = s[1:-1].strip()
            elif cur == sec and s.split("=", 1)[0].strip() == key:
                return i
        return "?"

    def _where(self, sec, key):
        if self.source and self._text:
            line = self._line(self._text, sec, key)
            if line != "?":
                return f"{self.source}:{line}: "
        return ""

    def get(self, sec: str, key: str, kind=str):
        raw = self.p[sec][key]
        try:
            if kind is bool:
                return self.p.getboolean(sec, key)
            return kind(raw)
        except ValueError:
            raise ConfigurationError(
                f"{self._where(sec, key)}{sec}.{key} = {raw!r} is not a valid {kind.__name__}"
            ) from None

    def optional(self, sec: str, key: str, kind=str):
        return None if self.p[sec][key].strip() == "" else self.get(sec, key, kind)

    def echo(self) -> str:
        lines = []
        for sec in DEFAULTS:
            lines.append(f"[{sec}]")
            lines += [f"{k} = {self.p[sec][k]}" for k in DEFAULTS[sec]]
        return "\n".join(lines)

    def as_dict(self) -> dict:
        return {sec: dict(self.p[sec]) for sec in DEFAULTS}

    # typed blocks ----------------------------------------------------------

    def model(self) -> ModelSpec:
        kernel = self.get("model", "kernel").strip().lower()
        L = self.get("model", "L", int) if kernel != "none" else None
        return ModelSpec.create(self.get("model", "K", float), self.get("model", "beta", float),
                                kernel, L)

    def geometry(self) -> LatticeGeometry:
        return LatticeGeometry(self.get("geometry", "N", int), self.get("geometry", "q", int))

    def chain(self, observables=None) -> sampler.ChainConfig:
        obs = observables or tuple(o.strip() for o in self.get("chain", "observables").split(",")
                                   if o.strip())
        return sampler.ChainConfig(self.get("chain", "steps", int), self.get("chain", "burn_in", int),
                                   self.get("chain", "thin", int), self.get("chain", "seed", int),
                                   obs)

    def phi_seed(self) -> int:
        s = self.optional("phi", "seed", int)
        return self.get("chain", "seed", int) if s is None else s

    def out_dir(self, override: str | None) -> Path:
        d = Path(override or self.get("output", "directory"))
        try:
            d.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigurationError(f"cannot create output directory {d}: {exc}") from None
        return d

    def formats(self) -> set:
        return {f.strip() for f in self.get("output", "formats").split(",")}


def _write(path: Path, text: str):
    try:
        path.write_text(text)
    except OSError as exc:
        raise ConfigurationError(f"cannot write {path}: {exc}") from None
    print(path)


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n"


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(type(x))


# ---------------------------------------------------------------------------
# tables

def _tables(cfg: Config, accept_large: bool) -> cg.CorrelationTables:
    model, geo = cfg.model(), cfg.geometry()
    path = cfg.optional("phi", "table")
    if path and Path(path).exists():
        return cg.CorrelationTables.read(path)
    return _compute_tables(cfg, model, geo.q, accept_large)


def _compute_tables(cfg, model, q, accept_large):
    mode = cfg.get("phi", "mode").strip().lower()
    if mode == "exact":
        return cg.phi_tables_exact(q, model.K, model.beta, cap=q if accept_large else None)
    if mode == "mc":
        return cg.phi_tables_mc(q, model.K, model.beta, cfg.get("phi", "steps", int),
                                cfg.phi_seed(), burn_in=cfg.optional("phi", "burn_in", int))
    raise ConfigurationError(f"phi.mode must be 'exact' or 'mc', got {mode!r}")


def cmd_precompute_phi(cfg: Config, args) -> int:
    model, q = cfg.model(), cfg.get("geometry", "q", int)
    tables = _compute_tables(cfg, model, q, args.accept_large)
    out = cfg.optional("phi", "table")
    path = Path(out) if out else cfg.out_dir(args.out) / "phi_table.txt"
    if args.out and out:
        path = cfg.out_dir(args.out) / Path(out).name
    _write(path, tables.to_text(cfg.echo()))
    return 0


# ---------------------------------------------------------------------------
# simulations

def _emit_chain(stats: sampler.ChainStats, cfg: Config, out: Path, stem: str):
    fm = cfg.formats()
    if "csv" in fm:
        _write(out / f"{stem}_stream.csv", sampler.stream_csv(stats, cfg.echo()))
    if "json" in fm:
        _write(out / f"{stem}_summary.json", sampler.summary_json(stats, cfg.as_dict()))


def cmd_simulate_micro(cfg: Config, args) -> int:
    stats = sampler.run_micro_chain(cfg.model(), cfg.geometry(), cfg.chain())
    _emit_chain(stats, cfg, cfg.out_dir(args.out), "micro")
    return 0


def cmd_simulate_cg(cfg: Config, args) -> int:
    model, geo = cfg.model(), cfg.geometry()
    tables = _tables(cfg, args.accept_large)
    cgh = cg.build_coarse_hamiltonian(model, geo, tables)
    stats = sampler.run_cg_chain(cgh, geo, cfg.chain(), exchange=cfg.get("chain", "exchange", bool))
    out = cfg.out_dir(args.out)
    _emit_chain(stats, cfg, out, "cg")
    if args.compare:
        micro = sampler.run_micro_chain(model, geo, cfg.chain())
        _emit_chain(micro, cfg, out, "micro")
        _write(out / "comparison.csv", comparison_csv(micro, stats, cfg.echo()))
    return 0


def comparison_csv(micro: sampler.ChainStats, coarse: sampler.ChainStats, echo: str) -> str:
    lines = [f"# {ln}" for ln in echo.splitlines()]
    lines.append("observable,micro_mean,micro_stderr,cg_mean,cg_stderr,gap,combined_3se")
    for name in ("energy", "magnetization"):
        a, b = micro[name], coarse[name]
        lines.append(",".join([name, repr(a.mean), repr(a.stderr), repr(b.mean), repr(b.stderr),
                               repr(abs(a.mean - b.mean)), repr(3 * math.hypot(a.stderr, b.stderr))]))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# reconstruction

def _parse_window(text: str | None):
    if text is None:
        return None
    try:
        a, b = (int(x) for x in text.split(".."))
    except ValueError:
        raise ConfigurationError(f"--window must look like A..B, got {text!r}") from None
    return a, b


def _rows_text(sig: np.ndarray) -> str:
    return "\n".join("".join("+" if s > 0 else "-" for s in row) for row in np.atleast_2d(sig))


def cmd_reconstruct(cfg: Config, args) -> int:
    model, geo = cfg.model(), cfg.geometry()
    plan = ReconstructionPlan(exactness=cfg.get("reconstruct", "exactness"),
                                    cell_steps=cfg.get("reconstruct", "cell_steps", int),
                                    accept_large=args.accept_large)
    seed = cfg.get("chain", "seed", int)
    draws = cfg.get("reconstruct", "draws", int)
    eta_text = cfg.optional("reconstruct", "eta")
    tables = _tables(cfg, args.accept_large) if plan.exactness == "mcmc" else None
    if eta_text:
        try:
            eta = np.array([int(x) for x in eta_text.split(",")])
        except ValueError:
            raise ConfigurationError(f"reconstruct.eta = {eta_text!r} is not a list of integers") from None
    else:
        cgh = cg.build_coarse_hamiltonian(model, geo, _tables(cfg, args.accept_large))
        eta = sampler.run_cg_chain(cgh, geo, cfg.chain()).final_state
    out = cfg.out_dir(args.out)
    window = _parse_window(args.window)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        if window is None:
            sig = reconstruct_many(eta, draws, model, geo, plan, seed, tables)
            header = [f"# eta {' '.join(map(str, eta))}"]
        else:
            w = local_reconstruct(eta, window, model, geo, plan, seed, draws, tables)
            sig = w.spins
            header = [f"# eta {' '.join(map(str, eta))}", f"# window {w.start}..{w.stop}"]
    for c in caught:
        print(f"note: {c.message}", file=sys.stderr)
    echo = [f"# {ln}" for ln in cfg.echo().splitlines()]
    _write(out / "reconstruct.txt", "\n".join(echo + header + [_rows_text(sig)]) + "\n")
    if cfg.get("reconstruct", "roundtrip", bool):
        rep = roundtrip_check(model, geo, plan, cfg.chain(("magnetization",)))
        _write(out / "roundtrip.json", _json({"config": cfg.as_dict(), "report": rep.to_dict()}))
    return 0


# ---------------------------------------------------------------------------
# validation suite

def _check(name, measured, tol, relation="<="):
    ok = measured <= tol if relation == "<=" else measured >= tol
    return {"check": name, "measured": float(measured), "tolerance": float(tol),
            "relation": relation, "passed": bool(ok)}


def validation_suite(model: ModelSpec) -> list:
    """Oracle-backed invariants at desk scale for the model's couplings."""
    K, beta = model.K, model.beta
    short = model.with_(kernel=None)
    mixed = model.with_(kernel=model.long.kernel_shape if model.long else "triangular",
                        L=min(model.long.L if model.long else 4, 4))
    checks = []

    for N, q in ((8, 2), (12, 3)):
        for m in (short, mixed):
            _, _, gap = oracle.exact_partition_identity_check(m, LatticeGeometry(N, q))
            tag = "mixed" if m.long else "short"
            checks.append(_check(f"partition_identity N={N} q={q} {tag}", gap, 1e-10))

    geo = LatticeGeometry(12, 3)
    kern = cg.build_coarse_kernel(mixed, geo)
    worst = 0.0
    for eta in all_coarse_configs(geo):
        fib = oracle._fiber(eta, geo)
        worst = max(worst, abs(float(np.mean(h_long(fib, mixed, geo))) - cg.h_cg_long(eta, kern, geo)))
    checks.append(_check("long_range_conditional_mean N=12 q=3", worst, 1e-12))

    for q in (2, 3, 4):
        t = cg.phi_tables_exact(q, K, beta)
        lam, a = math.tanh(beta * K), math.cosh(beta * K)
        worst = 0.0
        for el in range(-q, q + 1, 2):
            for em in range(-q, q + 1, 2):
                for er in range(-q, q + 1, 2):
                    z3 = oracle.three_cell_partition_function(el, em, er, short, q)
                    z1 = [oracle.cell_partition_function(e, oracle.FREE, short, q) for e in (el, em, er)]
                    ref = -(math.log(z3) - sum(map(math.log, z1))) / beta
                    worst = max(worst, abs(cg.three_body_potential(el, em, er, t, lam, a, beta) - ref))
        checks.append(_check(f"three_body_closed_form q={q}", worst, 1e-10))

    for q in range(2, 7):
        t = cg.phi_tables_exact(q, K, beta)
        lam = math.tanh(beta * K)
        worst = 0.0
        for eta in range(-q, q + 1, 2):
            n = (eta + q) // 2
            p1, p2 = t.phi1[n], t.phi2[n]
            for sl in (-1, 1):
                for sr in (-1, 1):
                    closed = lam**2 * sl * sr * (p2 - p1**2) / ((1 - lam * sl * p1) * (1 - lam * sr * p1))
                    worst = max(worst, abs(oracle.f_short(eta, sl, sr, short, q) - closed))
        checks.append(_check(f"f_short_closed_form q={q}", worst, 1e-10))

    for q in (2, 4, 6):
        t = cg.phi_tables_exact(q, 0.0, beta)
        e = t.etas.astype(float)
        worst = max(np.abs(t.phi1 - e / q).max(),
                    np.abs(t.phi2 - (e * e - q) / (q * (q - 1))).max())
        checks.append(_check(f"phi_tables_K0 q={q}", worst, 1e-12))

    geo = LatticeGeometry(16, 4)
    cgh = cg.build_coarse_hamiltonian(mixed, geo)
    rng = np.random.default_rng(0)
    eta = rng.choice(np.arange(-4, 5, 2), size=geo.M)
    worst = 0.0
    for _ in range(200):
        k = int(rng.integers(geo.M))
        new = int(rng.choice(np.arange(-4, 5, 2)))
        d = cg.h_cg0_delta(eta, k, new, cgh, geo)
        eta2 = eta.copy()
        eta2[k] = new
        worst = max(worst, abs(d - (cg.h_cg0(eta2, cgh, geo) - cg.h_cg0(eta, cgh, geo))))
        eta = eta2
    checks.append(_check("h_cg0_delta_consistency", worst, 1e-10))

    etas = all_coarse_configs(geo)
    checks.append(_check("coarse_spin_flip_symmetry",
                         float(np.abs(cg.h_cg0(etas, cgh, geo) - cg.h_cg0(-etas, cgh, geo)).max()),
                         1e-10))

    worst = -np.inf
    for q in range(2, 7):
        t = cg.phi_tables_exact(q, K, beta)
        lam = math.tanh(beta * K)
        for eta in range(-q, q + 1, 2):
            env = diagnostics.theta_envelope(eta, t, lam)
            for sl in (-1, 1):
                for sr in (-1, 1):
                    worst = max(worst, abs(oracle.f_short(eta, sl, sr, short, q)) - env)
    checks.append(_check("theta_dominance (|f| - envelope)", worst, 1e-12))

    re = diagnostics.relative_entropy_per_site(short, LatticeGeometry(8, 2))
    checks.append(_check("relative_entropy_nonnegative", re, 0.0, ">="))

    geo = LatticeGeometry(8, 2)
    eta = np.array([0, 2, -2, 0])
    sig = reconstruct_many(eta, 64, short, geo, seed=1)
    mism = float(np.abs(coarse_map(sig, geo) - eta).max())
    checks.append(_check("reconstruction_fibre", mism, 0.0))
    return checks


def cmd_validate(cfg: Config, args) -> int:
    checks = validation_suite(cfg.model())
    ok = all(c["passed"] for c in checks)
    out = cfg.out_dir(args.out)
    _write(out / "validate_report.json", _json({"config": cfg.as_dict(), "passed": ok,
                                                "checks": checks}))
    for c in checks:
        print(f"{'PASS' if c['passed'] else 'FAIL'} {c['check']}: {c['measured']:.3e} "
              f"{c['relation']} {c['tolerance']:.1e}")
    if not ok:
        raise ValidationFailure("validation suite reported failures")
    return 0


# ---------------------------------------------------------------------------

COMMANDS = {
    "precompute-phi": cmd_precompute_phi,
    "simulate-micro": cmd_simulate_micro,
    "simulate-cg": cmd_simulate_cg,
    "validate": cmd_validate,
    "reconstruct": cmd_reconstruct,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cgmc", description="Coarse-grained Monte Carlo for 1-D spin chains")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="INI configuration file")
        s.add_argument("--seed", type=int, help="seed for every random stream (uint64)")
        s.add_argument("--out", help="output directory")
        s.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                       help="section.key=value, repeatable; wins over the file")
        s.add_argument("--accept-large", action="store_true", help="lift enumeration caps")
        if name == "reconstruct":
            s.add_argument("--window", metavar="A..B", help="reconstruct cells A..B only")
        if name == "simulate-cg":
            s.add_argument("--compare", action="store_true",
                           help="also run the micro chain and write comparison.csv")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = Config.load(args.config, args.override, args.seed)
        return COMMANDS[args.command](cfg, args)
    except CGMCError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:  # seed range and similar argument checks
        print(f"error: {exc}", file=sys.stderr)
        return ConfigurationError.exit_code


if __name__ == "__main__":
    sys.exit(main())
