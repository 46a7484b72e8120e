"""Run configuration, experiment suites and report writers behind the command line."""
from __future__ import annotations

import copy
import hashlib
import json
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.integrate import quad

from . import kernel as kn
from .design import AdmissibleSet, OuterConfig, design_alternate, design_local_1d, make_kappa2pt
from .grid import (ANTISYMMETRIC, SYMMETRIC, Domain, TwoPointField, build_grid, build_pairs,
                   cell_norm, write_field_csv, write_pairs_csv)
from .operators import (adjoint_defect, energy_dual, energy_dual_local, lift_flux, nl_divergence,
                        recover_flux)
from .state import SolverConfig, local_dual_oracle, solve_primal

DEFAULTS: dict = {
    "problem": {"n": 1, "p": 2.0, "alpha": -1.0, "delta": 0.1, "h_ratio": 8,
                "domain": [[0.0, 1.0]], "normalization": "lattice"},
    "data": {"f": {"kind": "const", "value": 1.0},
             "kappa": {"kind": "const", "value": 1.0},
             "admissible": {"kappa_lo": 0.5, "kappa_hi": 2.0, "V": 1.0, "halo_value": None}},
    "solver": {"tol": 1e-10, "max_iter": 200, "eta": 1e-8, "shrink": 0.5, "c1": 1e-4},
    "design": {"tol": 1e-6, "max_outer": 100, "lambda_tol": 1e-10, "local_cells": 4096},
    "sweep": {"deltas": [0.2, 0.1, 0.05]},
    "verify": {"draws": 20, "order": 64},
    "output": {"dir": "out", "timing": False},
    "seed": 0,
}


class ConfigError(ValueError):
    """Malformed or inconsistent run configuration."""


def _merge(base: dict, extra: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in extra.items():
        if key not in out:
            raise ConfigError(f"unknown config key {path + key!r}")
        if isinstance(out[key], dict) and isinstance(val, dict) and key != "f" and key != "kappa":
            out[key] = _merge(out[key], val, f"{path}{key}.")
        else:
            out[key] = copy.deepcopy(val)
    return out


@dataclass(frozen=True)
class RunConfig:
    raw: dict

    @classmethod
    def load(cls, path: str | None = None, overrides: dict | None = None) -> "RunConfig":
        data = DEFAULTS
        if path is not None:
            try:
                text = Path(path).read_text(encoding="utf-8")
            except OSError as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from exc
            try:
                loaded = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
            if not isinstance(loaded, dict):
                raise ConfigError("config root must be an object")
            data = _merge(data, loaded)
        if overrides:
            data = _merge(data, overrides)
        cfg = cls(data)
        cfg.validate()
        return cfg

    def __getitem__(self, key):
        return self.raw[key]

    @property
    def h(self) -> float:
        return self["problem"]["delta"] / self["problem"]["h_ratio"]

    def with_delta(self, delta: float) -> "RunConfig":
        raw = copy.deepcopy(self.raw)
        raw["problem"]["delta"] = float(delta)
        return RunConfig(raw)

    def hash(self) -> str:
        """Digest of everything that can change a result; the output directory is left out."""
        raw = copy.deepcopy(self.raw)
        raw["output"].pop("dir", None)
        blob = json.dumps(raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def validate(self) -> None:
        pr = self["problem"]
        try:
            spec = self.kernel()
            if spec.n not in (1, 2):
                raise ConfigError("grids support n = 1 or 2")
            if len(pr["domain"]) != spec.n:
                raise ConfigError("domain must have one [a, b] pair per dimension")
            Domain(tuple(tuple(ab) for ab in pr["domain"]))
            if pr["h_ratio"] < 2:
                raise ConfigError("h_ratio = delta/h must be at least 2")
            if pr["normalization"] not in ("lattice", "continuum"):
                raise ConfigError("normalization must be 'lattice' or 'continuum'")
            self.solver()
            self.admissible()
            if any(d <= 0 for d in self["sweep"]["deltas"]):
                raise ConfigError("sweep deltas must be positive")
        except (kn.KernelError, ValueError, TypeError, KeyError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc

    def kernel(self, c_scale: float = 1.0) -> kn.KernelSpec:
        pr = self["problem"]
        base = kn.KernelSpec(int(pr["n"]), float(pr["p"]), float(pr["delta"]), float(pr["alpha"]))
        if c_scale == 1.0:
            return base
        return kn.KernelSpec(base.n, base.p, base.delta, base.alpha, c_norm=base.c_norm * c_scale)

    def domain(self) -> Domain:
        return Domain(tuple(tuple(ab) for ab in self["problem"]["domain"]))

    def solver(self) -> SolverConfig:
        return SolverConfig(**self["solver"])

    def outer(self) -> OuterConfig:
        d = self["design"]
        return OuterConfig(tol=d["tol"], max_outer=d["max_outer"], lambda_tol=d["lambda_tol"])

    def admissible(self) -> AdmissibleSet:
        a = self["data"]["admissible"]
        return AdmissibleSet(a["kappa_lo"], a["kappa_hi"], a["V"], self.domain().measure,
                             a.get("halo_value"))


# ---------------------------------------------------------------------------
# fields


def bump(x: np.ndarray, centre: np.ndarray, radius: float) -> np.ndarray:
    """``exp(1 - 1/(1 - |t|^2))`` for ``|t| < 1``, ``t = (x - centre)/radius``; zero outside."""
    t = (np.atleast_2d(x) - centre) / radius
    s = np.sum(t * t, axis=1)
    out = np.zeros(s.shape)
    m = s < 1
    out[m] = np.exp(1.0 - 1.0 / (1.0 - s[m]))
    return out


def bump_gradient(x: np.ndarray, centre: np.ndarray, radius: float) -> np.ndarray:
    t = (np.atleast_2d(x) - centre) / radius
    s = np.sum(t * t, axis=1)
    out = np.zeros(t.shape)
    m = s < 1
    out[m] = (bump(x, centre, radius)[m] * (-2.0 / (1.0 - s[m]) ** 2))[:, None] * t[m] / radius
    return out


def bump_field(domain: Domain):
    """Smooth compactly supported flux and its divergence.

    Component ``k`` of the flux is the bump scaled by ``1/(k+1)``, centred
    in the box with radius 0.3 of the shortest side.
    """
    centre = np.array([(a + b) / 2 for a, b in domain.bounds])
    radius = 0.3 * min(b - a for a, b in domain.bounds)
    scales = 1.0 / (1.0 + np.arange(domain.n))

    def sigma(x):
        return bump(x, centre, radius)[:, None] * scales[None, :]

    def div(x):
        return bump_gradient(x, centre, radius) @ scales

    return sigma, div


def scalar_data(spec: dict, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    kind = spec.get("kind")
    if kind == "const":
        return np.full(x.shape[0], float(spec["value"]))
    if kind == "random":
        return rng.uniform(float(spec["lo"]), float(spec["hi"]), x.shape[0])
    if kind == "cosine":
        # mean + amp * prod_k cos(2 pi x_k)
        return float(spec["mean"]) + float(spec["amp"]) * np.prod(np.cos(2 * np.pi * x), axis=1)
    if kind == "bump":
        centre = np.asarray(spec.get("centre", [0.5] * x.shape[1]), dtype=float)
        return float(spec.get("value", 1.0)) * bump(x, centre, float(spec.get("radius", 0.3)))
    raise ConfigError(f"unknown field kind {kind!r}")


class Problem:
    """Grid, pairs and data fields assembled from a config."""

    def __init__(self, cfg: RunConfig, c_scale: float = 1.0):
        self.cfg = cfg
        self.spec = cfg.kernel(c_scale)
        self.grid = build_grid(cfg.domain(), cfg.h, self.spec.delta)
        self.pairs = build_pairs(self.grid, self.spec, cfg["problem"]["normalization"])
        rng = np.random.default_rng(cfg["seed"])
        g = self.grid
        self.f = np.where(g.interior, scalar_data(cfg["data"]["f"], g.centers, rng), 0.0)
        kap = scalar_data(cfg["data"]["kappa"], g.centers, rng)
        halo = cfg["data"]["admissible"].get("halo_value")
        if halo is not None:
            kap = np.where(g.interior, kap, float(halo))
        if np.any(kap <= 0):
            raise ConfigError("conductivity data must be positive")
        self.kappa = kap


# ---------------------------------------------------------------------------
# reports


def check(name: str, value: float, reference: float, tolerance: float,
          passed: bool | None = None) -> dict:
    if passed is None:
        passed = abs(value - reference) <= tolerance
    return {"name": name, "value": float(value), "reference": float(reference),
            "tolerance": float(tolerance), "pass": bool(passed)}


def report(cfg: RunConfig, command: str, results: list[dict], **extra) -> dict:
    out = {"config_hash": cfg.hash(), "command": command, "problem": cfg["problem"],
           "results": results}
    out.update(extra)
    return out


def all_passed(rep: dict) -> bool:
    return all(r["pass"] for r in rep["results"])


def write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_csv(path: Path, text: str, config_hash: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(f"# config_hash={config_hash}\n" + text, encoding="utf-8")


SWEEP_HEADER = "delta,h,value,reference,abs_error,rel_error,runtime\n"


def sweep_row(delta, h, value, reference, runtime) -> dict:
    err = abs(value - reference)
    rel = err / abs(reference) if reference != 0 else None
    return {"delta": delta, "h": h, "value": value, "reference": reference,
            "abs_error": err, "rel_error": rel, "runtime": runtime}


def sweep_csv(rows: list[dict]) -> str:
    lines = [SWEEP_HEADER]
    for r in rows:
        cells = ["" if r[k] is None else repr(float(r[k])) for k in
                 ("delta", "h", "value", "reference", "abs_error", "rel_error", "runtime")]
        lines.append(",".join(cells) + "\n")
    return "".join(lines)


# ---------------------------------------------------------------------------
# suites


def run_verify(cfg: RunConfig, c_scale: float = 1.0) -> dict:
    """Kernel constants, identities, adjointness, parity, recovery bound and round trip."""
    results = []
    rng = np.random.default_rng(cfg["seed"])
    order = int(cfg["verify"]["order"])
    draws = int(cfg["verify"]["draws"])
    p = float(cfg["problem"]["p"])

    for pp in (1.5, 2.0, 3.0, 4.0):
        for n in (1, 2, 3):
            ref = kn.closed_form_Kpn(pp, n)
            val = kn.quad_Kpn(pp, n, order=128)
            results.append(check(f"Kpn p={pp} n={n}", val, ref, 1e-8 * ref))

    spec = cfg.kernel(c_scale)
    # moment by adaptive radial quadrature, independent of the closed-form constant
    radial, _ = quad(lambda r: r ** (spec.n - 1 + spec.p + spec.alpha * spec.p), 0.0, spec.delta,
                     epsabs=0, epsrel=1e-13)
    moment = kn.sphere_area(spec.n) * spec.c_norm ** spec.p * radial
    target = 1.0 / spec.Kpn
    results.append(check("kernel normalization", moment / target, 1.0, 1e-10))
    results.append(check("c_norm vs closed form",
                         spec.c_norm / kn.normalize(spec.alpha, spec.delta, spec.p, spec.n),
                         1.0, 1e-12))

    for n in (2, 3):
        worst_id, worst_vol = 0.0, 0.0
        ks = kn.KernelSpec(n, p, 1.0, -1.0)
        for _ in range(draws):
            e = rng.normal(size=n)
            e /= np.linalg.norm(e)
            A = rng.normal(size=(n, n))
            scale = 1.0 + abs(np.trace(A))
            lhs, rhs = kn.verify_trace_identity(e, A, p, n, order)
            worst_id = max(worst_id, abs(lhs - rhs) / scale)
            lhs, rhs = kn.verify_trace_volume(e, A, ks, 0.0, order)
            worst_vol = max(worst_vol, abs(lhs - rhs) / scale)
        results.append(check(f"trace identity n={n}", worst_id, 0.0, 1e-8))
        results.append(check(f"trace volume n={n}", worst_vol, 0.0, 1e-8))

    for n, m in ((1, 64), (2, 16)):
        h = 1.0 / m
        dom = Domain(tuple((0.0, 1.0) for _ in range(n)))
        ks = kn.KernelSpec(n, p, 4 * h)
        pairs = build_pairs(build_grid(dom, h, ks.delta), ks)
        worst = 0.0
        for _ in range(draws):
            tp = TwoPointField(rng.normal(size=pairs.size), ANTISYMMETRIC)
            u = np.where(pairs.grid.interior, rng.normal(size=pairs.grid.size), 0.0)
            d, s = adjoint_defect(tp, u, pairs)
            worst = max(worst, d / s)
        results.append(check(f"adjoint defect n={n}", worst, 0.0, 1e-12))
        sym = TwoPointField(rng.normal(size=pairs.size), SYMMETRIC)
        results.append(check(f"divergence of symmetric n={n}",
                             float(np.max(np.abs(nl_divergence(sym, pairs)))), 0.0, 1e-12))

    # 1D operator checks at the configured exponent
    ks = kn.KernelSpec(1, p, 0.125)
    grid = build_grid(Domain.interval(), 1 / 64, ks.delta)
    pairs = build_pairs(grid, ks)
    sigma = rng.normal(size=(grid.size, 1))
    fwd = lift_flux(sigma, ks, pairs)
    # swapping endpoints flips the offset; the lift must change sign
    z = -pairs.offset
    dirs = z / np.linalg.norm(z, axis=1)[:, None]
    g = 0.5 * (kn.j_density(sigma[pairs.j], dirs, p) + kn.j_density(sigma[pairs.i], dirs, p))
    swapped = g * np.abs(z[:, 0]) ** (p - 1) * pairs.w_omega ** (p - 1)
    results.append(check("lift antisymmetry", float(np.max(np.abs(fwd.values + swapped))),
                         0.0, 1e-12))
    kappa = rng.uniform(1.0, 2.0, grid.size)
    worst = -math.inf
    for _ in range(draws):
        tp = TwoPointField(rng.normal(size=pairs.size), ANTISYMMETRIC)
        loc = energy_dual_local(kappa, recover_flux(tp, pairs), ks.q, grid)
        nl = energy_dual(kappa, tp, ks.q, pairs)
        worst = max(worst, loc / nl - 1.0)
    results.append(check("recovery bound", worst, 0.0, 1e-10, passed=worst <= 1e-10))
    sigma0 = np.full((grid.size, 1), 0.7)
    rec = recover_flux(lift_flux(sigma0, ks, pairs), pairs)
    full = (grid.centers[:, 0] > ks.delta) & (grid.centers[:, 0] < 1 - ks.delta)
    results.append(check("constant round trip", float(np.max(np.abs(rec[full, 0] - 0.7))),
                         0.0, 1e-10))
    return report(cfg, "verify", results)


def run_solve(cfg: RunConfig, out: Path | None = None) -> dict:
    prob = Problem(cfg)
    k2 = make_kappa2pt(prob.kappa, prob.spec.q, prob.pairs)
    rep = solve_primal(k2, prob.f, prob.spec, prob.pairs, cfg.solver())
    rel_gap = rep.duality_gap / max(1.0, abs(rep.primal_energy))
    f_norm = cell_norm(prob.f, prob.grid, prob.spec.q)
    feas = rep.kkt_feasibility / f_norm if f_norm > 0 else rep.kkt_feasibility
    results = [
        check("relative duality gap", rel_gap, 0.0, 10 * cfg["solver"]["tol"]),
        check("relative feasibility", feas, 0.0, 10 * cfg["solver"]["tol"]),
    ]
    payload = report(cfg, "solve", results, state=rep.summary())
    if out is not None:
        h = cfg.hash()
        write_json(out / "solve.json", payload)
        write_csv(out / "u.csv", write_field_csv(rep.u, prob.grid), h)
        write_csv(out / "sigma2pt.csv", write_pairs_csv(rep.sigma2pt, prob.pairs), h)
        write_csv(out / "recovered_flux.csv",
                  write_field_csv(recover_flux(rep.sigma2pt, prob.pairs), prob.grid), h)
    return payload


def run_design(cfg: RunConfig, out: Path | None = None) -> dict:
    prob = Problem(cfg)
    adm = cfg.admissible()
    rep = design_alternate(prob.f, adm, prob.spec, prob.pairs, cfg.solver(), cfg.outer())
    hist = rep.objective_history
    scale = max(abs(v) for v in hist)
    increase = max((b - a for a, b in zip(hist, hist[1:])), default=0.0)
    results = [
        check("objective non-increasing", increase, 0.0, 1e-12 * scale,
              passed=increase <= 1e-12 * scale),
        check("volume", rep.volume_used, adm.V, 1e-8 * adm.V,
              passed=rep.volume_used <= adm.V * (1 + 1e-8)),
    ]
    payload = report(cfg, "design", results, design={
        "objective": rep.objective, "objective_history": hist,
        "volume_used": rep.volume_used, "iterations": rep.iterations,
        "max_inner_gap": max(s["duality_gap"] for s in rep.inner)})
    if out is not None:
        write_json(out / "design.json", payload)
        write_csv(out / "kappa.csv", write_field_csv(rep.kappa, prob.grid), cfg.hash())
    return payload


def consistency_error(cfg: RunConfig) -> float:
    """``|| D lift(sigma) - div sigma ||_q`` over Omega for the bump flux."""
    prob = Problem(cfg)
    sigma_fn, div_fn = bump_field(prob.grid.domain)
    sigma = sigma_fn(prob.grid.centers)
    d = nl_divergence(lift_flux(sigma, prob.spec, prob.pairs), prob.pairs)
    exact = np.where(prob.grid.interior, div_fn(prob.grid.centers), 0.0)
    return cell_norm(d - exact, prob.grid, prob.spec.q)


def norm_stability_gap(cfg: RunConfig) -> float:
    """``I_delta(kappa; lift(sigma)) - I_loc(kappa; sigma)`` for the bump flux."""
    prob = Problem(cfg)
    sigma_fn, _ = bump_field(prob.grid.domain)
    sigma = sigma_fn(prob.grid.centers)
    q = prob.spec.q
    return (energy_dual(prob.kappa, lift_flux(sigma, prob.spec, prob.pairs), q, prob.pairs)
            - energy_dual_local(prob.kappa, sigma, q, prob.grid))


def _timed(fn, timing: bool):
    t0 = time.perf_counter()
    val = fn()
    return val, (time.perf_counter() - t0 if timing else None)


def run_consistency(cfg: RunConfig, out: Path | None = None) -> dict:
    timing = bool(cfg["output"]["timing"])
    rows = []
    for delta in cfg["sweep"]["deltas"]:
        c = cfg.with_delta(delta)
        err, rt = _timed(lambda: consistency_error(c), timing)
        rows.append(sweep_row(delta, c.h, err, 0.0, rt))
    errs = [r["value"] for r in rows]
    orders = [math.log2(a / b) / math.log2(da / db) for a, b, da, db in
              zip(errs, errs[1:], cfg["sweep"]["deltas"], cfg["sweep"]["deltas"][1:])]
    decreasing = all(b < a for a, b in zip(errs, errs[1:]))
    results = [check("error strictly decreasing", float(decreasing), 1.0, 0.0)]
    payload = report(cfg, "consistency", results, rows=rows, orders=orders)
    if out is not None:
        write_json(out / "consistency.json", payload)
        write_csv(out / "consistency.csv", sweep_csv(rows), cfg.hash())
    return payload


def run_localize(cfg: RunConfig, out: Path | None = None) -> dict:
    if cfg["problem"]["n"] != 1:
        raise ConfigError("localize needs n = 1 (the local reference is one-dimensional)")
    timing = bool(cfg["output"]["timing"])
    adm = cfg.admissible()
    p = float(cfg["problem"]["p"])
    (a, b), = cfg["problem"]["domain"]
    m = int(cfg["design"]["local_cells"])
    rng = np.random.default_rng(cfg["seed"])
    xs = a + (np.arange(m) + 0.5) * (b - a) / m
    f_loc = scalar_data(cfg["data"]["f"], xs[:, None], rng)
    d_loc = design_local_1d(f_loc, adm, p, a, b, cfg.outer()).objective
    kappa_fixed = float(np.clip(adm.V / (b - a), adm.kappa_lo, adm.kappa_hi))
    fdata = cfg["data"]["f"]
    i_loc = local_dual_oracle(lambda x: kappa_fixed,
                              lambda x: scalar_data(fdata, np.atleast_1d(x)[:, None], rng),
                              p, a, b)
    design_rows, state_rows = [], []
    for delta in cfg["sweep"]["deltas"]:
        c = cfg.with_delta(delta)
        prob = Problem(c)
        rep, rt = _timed(lambda: design_alternate(prob.f, adm, prob.spec, prob.pairs,
                                                  c.solver(), c.outer()), timing)
        design_rows.append(sweep_row(delta, c.h, rep.objective, d_loc, rt))
        kappa = np.full(prob.grid.size, kappa_fixed)
        k2 = make_kappa2pt(kappa, prob.spec.q, prob.pairs)
        st, rt = _timed(lambda: solve_primal(k2, prob.f, prob.spec, prob.pairs, c.solver()), timing)
        state_rows.append(sweep_row(delta, c.h, -st.primal_energy, i_loc, rt))
    errs = [r["abs_error"] for r in design_rows]
    results = [
        check("design error strictly decreasing", float(all(y < x for x, y in zip(errs, errs[1:]))),
              1.0, 0.0),
        check("state error strictly decreasing",
              float(all(y["abs_error"] < x["abs_error"] for x, y in zip(state_rows, state_rows[1:]))),
              1.0, 0.0),
    ]
    payload = report(cfg, "localize", results, d_loc=d_loc, i_loc=i_loc,
                     design_rows=design_rows, state_rows=state_rows)
    if out is not None:
        write_json(out / "localize.json", payload)
        write_csv(out / "localize_design.csv", sweep_csv(design_rows), cfg.hash())
        write_csv(out / "localize_state.csv", sweep_csv(state_rows), cfg.hash())
    return payload
