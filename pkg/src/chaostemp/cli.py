"""Command-line entry point: ``chaostemp <command> --config run.yaml``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 acceptance failure.  The output directory may be overridden with the
``CHAOSTEMP_OUTPUT_DIR`` environment variable.
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import math
import os
import platform
import sys
import time
from dataclasses import dataclass, field
from importlib import metadata, resources
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from . import acceptance
from .diagnostics import (
    block_seeds,
    estimate_chi,
    gg_residual,
    overlap_statistics,
    sign_test_decrease,
)
from .fields import FieldSpec
from .functional import (
    UncoupledError,
    coupled_functional,
    general_coupled_measure,
    minimize_parisi,
    parisi_functional,
    strict_gap_scan,
)
from .gibbs import EXACT_CAP, BudgetError, draws, exact_ensemble, mc_ensemble
from .measure import MeasureError, ParisiMeasure, decoupling_point, support_inf
from .mixture import MixtureError, MixtureSpec
from .pde import GridError, PdeGrid, solve_phi
from .stochastic import (
    ControlProcess,
    EscapeError,
    SdeConfig,
    ito_check,
    sine_perturbation,
    variational_value,
)

OUTPUT_ENV = "CHAOSTEMP_OUTPUT_DIR"
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_ACCEPTANCE = 0, 2, 3, 4
COMMANDS = ("parisi-solve", "parisi-fit", "coupled-bound", "sde-check", "mc-run", "gg-check", "chaos-scan", "verify")


class ConfigError(ValueError):
    pass


NUMERIC_ERRORS = (GridError, EscapeError, MeasureError, UncoupledError, BudgetError, FloatingPointError)


# ---------------------------------------------------------------------------
# configuration


def default_config() -> dict:
    text = resources.files("chaostemp").joinpath("default_config.yaml").read_text()
    return yaml.safe_load(text)


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


@dataclass
class RunConfig:
    raw: dict
    spec: MixtureSpec
    beta1: float
    beta2: float
    fields: FieldSpec
    grid: dict
    k: int
    n_list: list
    seeds: list
    budgets: dict
    output_dir: Path
    sections: dict = field(default_factory=dict)

    @property
    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.raw, sort_keys=True, default=str).encode()).hexdigest()

    def section(self, name: str) -> dict:
        return dict(self.raw.get(name.replace("-", "_")) or {})

    def pde_grid(self, beta_total: float) -> PdeGrid:
        return PdeGrid.default(self.spec, beta_total, dx=float(self.grid.get("dx", 0.005)),
                               substeps=int(self.grid.get("substeps", 1)))


def load_config(path: str | None, output_dir: str | None = None) -> RunConfig:
    raw = default_config()
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {path} does not exist")
        try:
            user = yaml.safe_load(p.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config must be a mapping")
        raw = _merge(raw, user)
    _check_files(raw, Path(path).parent if path else Path.cwd())
    try:
        spec = MixtureSpec({int(p): float(g) for p, g in raw["mixture"].items()})
        fields = FieldSpec.from_dict(raw["fields"])
        beta1, beta2 = float(raw["beta1"]), float(raw["beta2"])
        seeds = [int(s) for s in raw["seeds"]]
        n_list = [int(n) for n in raw["n_list"]]
    except (KeyError, TypeError, ValueError, MixtureError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc
    if beta1 <= 0 or beta2 <= 0:
        raise ConfigError("beta1 and beta2 must be positive")
    if not seeds:
        raise ConfigError("seed list must be nonempty")
    out = os.environ.get(OUTPUT_ENV) or output_dir or raw.get("output_dir") or "chaostemp-out"
    return RunConfig(raw, spec, beta1, beta2, fields, dict(raw.get("grid") or {}), int(raw.get("k", 1)),
                     n_list, seeds, dict(raw.get("budgets") or {}), Path(out))


def _check_files(raw, base: Path):
    def walk(x):
        if isinstance(x, dict):
            for k, v in x.items():
                if str(k).endswith("_file") and v is not None and not (base / str(v)).is_file():
                    raise ConfigError(f"referenced file {v} does not exist")
                walk(v)
        elif isinstance(x, list):
            for v in x:
                walk(v)

    walk(raw)


def _measure(pairs) -> ParisiMeasure:
    try:
        return ParisiMeasure.from_pairs([tuple(map(float, p)) for p in pairs])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid measure {pairs}: {exc}") from exc


# ---------------------------------------------------------------------------
# outputs


NUMBER = {"type": ["number", "null"]}
SCHEMAS = {
    "parisi-solve": {"type": "object", "required": ["phi0", "functional", "beta", "measure"],
                     "properties": {"phi0": NUMBER}},
    "parisi-fit": {"type": "object", "required": ["systems", "q0"]},
    "coupled-bound": {"type": "object", "required": ["u", "v", "bound", "q0"]},
    "sde-check": {"type": "object", "required": ["ito", "variational"]},
    "mc-run": {"type": "object", "required": ["runs"]},
    "gg-check": {"type": "object", "required": ["by_n"]},
    "chaos-scan": {"type": "object", "required": ["rows"]},
    "verify": {"type": "object", "required": ["criteria", "all_passed"]},
}


class Outputs:
    def __init__(self, cfg: RunConfig, command: str):
        self.cfg, self.command = cfg, command
        self.dir = cfg.output_dir / command
        self.dir.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []
        self.started = time.time()

    def json(self, name: str, data: dict, schema: dict | None = None):
        data = _plain(data)
        if schema is not None:
            jsonschema.validate(data, schema)
        path = self.dir / name
        path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
        self.files.append(name)
        return path

    def csv(self, name: str, rows: list[dict]):
        path = self.dir / name
        keys = sorted({k for r in rows for k in r}) if rows else []
        with path.open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=keys)
            w.writeheader()
            for r in rows:
                w.writerow(_plain(r))
        self.files.append(name)
        return path

    def manifest(self, status: str, error: dict | None = None):
        versions = {"python": platform.python_version()}
        for pkg in ("numpy", "scipy", "numba", "pyyaml", "artifact"):
            try:
                versions[pkg] = metadata.version(pkg)
            except metadata.PackageNotFoundError:
                versions[pkg] = None
        data = dict(command=self.command, config_hash=self.cfg.hash, seeds=self.cfg.seeds, versions=versions,
                    outputs=self.files, status=status, error=error,
                    started=self.started, finished=time.time())
        (self.dir / "manifest.json").write_text(json.dumps(_plain(data), indent=2, sort_keys=True) + "\n")


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if math.isfinite(v) else None
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, Path):
        return str(x)
    return x


# ---------------------------------------------------------------------------
# commands


def cmd_parisi_solve(cfg: RunConfig, out: Outputs, args) -> int:
    sec = cfg.section("parisi-solve")
    j = int(sec.get("system", 1)) - 1
    beta = float(sec.get("beta") or (cfg.beta1, cfg.beta2)[j])
    mu = _measure(sec.get("measure", [[0.0, 1.0]]))
    h = sec.get("h")
    fields = cfg.fields if h is None else FieldSpec.fixed(float(h), float(h))
    h0 = float(fields.means[j]) if h is None else float(h)
    grid = cfg.pde_grid(beta)
    sol = solve_phi(cfg.spec, mu, beta, h0, grid)
    val = parisi_functional(cfg.spec, mu, beta, fields, grid, j=j)
    data = dict(phi0=sol.phi0, h=h0, beta=beta, system=j + 1, measure=mu.to_pairs(), grid=grid.to_dict(),
                functional=dict(with_log2=val.with_log2, without_log2=val.without_log2,
                                phi0_expect=val.phi0_expect, correction=val.correction_integral))
    out.json("summary.json", data, SCHEMAS["parisi-solve"])
    out.csv("summary.csv", [dict(beta=beta, h=h0, phi0=sol.phi0, with_log2=val.with_log2,
                                 without_log2=val.without_log2)])
    return EXIT_OK


def _fits(cfg: RunConfig):
    res = []
    for j, beta in enumerate((cfg.beta1, cfg.beta2)):
        res.append(minimize_parisi(cfg.spec, beta, cfg.fields, k=cfg.k, grid=None, j=j))
    return res


def cmd_parisi_fit(cfg: RunConfig, out: Outputs, args) -> int:
    fits = _fits(cfg)
    q0 = decoupling_point(fits[0].measure, fits[1].measure, cfg.beta1, cfg.beta2)
    systems = []
    for j, (beta, f) in enumerate(zip((cfg.beta1, cfg.beta2), fits)):
        systems.append(dict(system=j + 1, beta=beta, measure=f.measure.to_pairs(), c=support_inf(f.measure),
                            q_star=f.q_star, value_with_log2=f.value.with_log2,
                            value_without_log2=f.value.without_log2, evaluations=f.evaluations,
                            converged=f.converged))
    out.json("fit.json", dict(systems=systems, q0=q0, k=cfg.k), SCHEMAS["parisi-fit"])
    out.csv("fit.csv", [{k: v for k, v in s.items() if k != "measure"} for s in systems])
    return EXIT_OK


def cmd_coupled_bound(cfg: RunConfig, out: Outputs, args) -> int:
    sec = cfg.section("coupled-bound")
    if "mu1" in sec and "mu2" in sec:
        mu1, mu2 = _measure(sec["mu1"]), _measure(sec["mu2"])
    else:
        f1, f2 = _fits(cfg)
        mu1, mu2 = f1.measure, f2.measure
    u, v = float(sec.get("u", 0.0)), float(sec.get("v", 0.0))
    q0 = decoupling_point(mu1, mu2, cfg.beta1, cfg.beta2)
    grid = cfg.pde_grid(cfg.beta1 + cfg.beta2)
    mu = None if v < q0 else general_coupled_measure(mu1, mu2, cfg.beta1, cfg.beta2, v)
    cv = coupled_functional(cfg.spec, mu1, mu2, cfg.beta1, cfg.beta2, u, v, cfg.fields, grid, mu=mu)
    data = dict(u=u, v=v, q0=q0, bound=cv.to_dict(), mu1=mu1.to_pairs(), mu2=mu2.to_pairs(),
                canonical=mu is None)
    try:
        rep = strict_gap_scan(cfg.spec, mu1, mu2, cfg.beta1, cfg.beta2, cfg.fields, grid,
                              epsilon=float(sec.get("epsilon", 0.05)), n_v=int(sec.get("n_v", 32)))
        data["gap_scan"] = rep.to_dict()
        out.csv("gaps.csv", [dict(v=a, gap=b) for a, b in zip(rep.v_grid, rep.gaps)])
    except (UncoupledError, ValueError) as exc:
        data["gap_scan"] = dict(note=str(exc))
    out.json("bound.json", data, SCHEMAS["coupled-bound"])
    return EXIT_OK


def cmd_sde_check(cfg: RunConfig, out: Outputs, args) -> int:
    sec = cfg.section("sde-check")
    beta, h = float(sec.get("beta", cfg.beta1)), float(sec.get("h", 0.0))
    mu = _measure(sec.get("measure", [[0.0, 1.0]]))
    paths = int(sec.get("paths", cfg.budgets.get("paths", 100_000)))
    dt = float(sec.get("dt", 1e-3))
    seed = cfg.seeds[0]
    qs = [float(q) for q in sec.get("q_grid", [0.0])]
    xs = [float(x) for x in sec.get("x_grid", [0.0])]
    s, t, x0 = float(sec.get("s", 0.0)), float(sec.get("t", 0.5)), float(sec.get("x", 0.0))
    slices = sorted(set(np.round(np.arange(0.0, 1.0, 0.01), 10)) | set(qs) | {s, t})
    sol = solve_phi(cfg.spec, mu, beta, h, cfg.pde_grid(beta), extra_q=tuple(slices))
    cfgs = SdeConfig(dt=dt, paths=paths, seed=seed)
    ito = [ito_check(cfg.spec, mu, beta, h, q, x, sol, cfgs).to_dict() for q in qs for x in xs]
    fsx = float(sol.phi_interp(s, np.array([x0]))[0])
    bound = cfg.beta1 + cfg.beta2
    rows = [dict(kind="optimal", **variational_value(cfg.spec, sol, ControlProcess(bound=bound), s, t, x0,
                                                    cfgs).to_dict())]
    rng = np.random.default_rng(seed)
    for _ in range(int(sec.get("perturbations", 5))):
        amp = float(rng.uniform(0.1, 0.5) * rng.choice([-1.0, 1.0]))
        ctrl = ControlProcess(bound=bound, offset=sine_perturbation(amp, s, t, int(rng.integers(1, 4)),
                                                                    float(rng.uniform(0, 2 * math.pi))))
        rows.append(dict(kind="perturbed", amplitude=amp,
                         **variational_value(cfg.spec, sol, ctrl, s, t, x0, cfgs).to_dict()))
    failed = [r for r in ito if r["failed"]]
    out.json("sde.json", dict(ito=ito, variational=dict(f_sx=fsx, rows=rows), flagged=len(failed)),
             SCHEMAS["sde-check"])
    out.csv("ito.csv", ito)
    out.csv("variational.csv", rows)
    return EXIT_NUMERIC if failed else EXIT_OK


def _ensembles(cfg: RunConfig, n: int, seeds, beta2=None, mode="auto", ladder=6):
    beta2 = cfg.beta2 if beta2 is None else beta2
    ens = []
    for r in draws(cfg.spec, n, seeds, cfg.fields):
        use_exact = mode == "exact" or (mode == "auto" and n <= min(EXACT_CAP, 12))
        if use_exact:
            ens.append(exact_ensemble(r, cfg.beta1, beta2))
        else:
            ens.append(mc_ensemble(r, cfg.beta1, beta2, sweeps=int(cfg.budgets.get("sweeps", 20_000)),
                                   ladder=int(ladder), seed=r.seed))
    return ens


def cmd_mc_run(cfg: RunConfig, out: Outputs, args) -> int:
    sec = cfg.section("mc-run")
    runs, rows = [], []
    for n in cfg.n_list:
        ens = _ensembles(cfg, n, cfg.seeds, mode=sec.get("mode", "auto"), ladder=sec.get("ladder", 6))
        st = overlap_statistics(ens)
        chi, var = estimate_chi(st)
        runs.append(dict(n=n, modes=list(st.modes), statistics=st.to_dict(), chi=chi, var=var,
                         warnings=[w for e in ens for w in e.warnings]))
        for seed, e, r in zip(cfg.seeds, ens, range(len(ens))):
            for kind in ("ss", "rr", "sr"):
                m1, m2 = st.per_draw[kind][r, 0], st.per_draw[kind][r, 1]
                rows.append(dict(n=n, seed=seed, statistic=f"{kind}_m1", value=m1))
                rows.append(dict(n=n, seed=seed, statistic=f"{kind}_m2", value=m2))
    out.json("overlaps.json", dict(runs=runs), SCHEMAS["mc-run"])
    out.csv("overlaps.csv", rows)
    return EXIT_OK


def cmd_gg_check(cfg: RunConfig, out: Outputs, args) -> int:
    sec = cfg.section("gg-check")
    kw = dict(n=int(sec.get("n", 2)), p=int(sec.get("p", 2)), which=int(sec.get("which", 1)),
              phi=str(sec.get("phi", "ss")))
    block = int(sec.get("block", 4))
    by_n, rows = {}, []
    for n in cfg.n_list:
        vals = []
        for s in cfg.seeds:
            ens = [exact_ensemble(r, cfg.beta1, cfg.beta2) for r in draws(cfg.spec, n, block_seeds(s, block),
                                                                           cfg.fields)]
            res = gg_residual(ens, **kw)
            vals.append(abs(res.residual))
            rows.append(dict(n=n, seed=s, statistic="abs_residual", value=abs(res.residual)))
        by_n[n] = dict(mean_abs_residual=float(np.mean(vals)), per_seed=vals)
    data = dict(by_n=by_n, settings=dict(block=block, **kw))
    if len(cfg.n_list) >= 2:
        a, b = cfg.n_list[0], cfg.n_list[-1]
        data["sign_test"] = sign_test_decrease(by_n[a]["per_seed"], by_n[b]["per_seed"]).to_dict()
    out.json("gg.json", data, SCHEMAS["gg-check"])
    out.csv("gg.csv", rows)
    return EXIT_OK


def cmd_chaos_scan(cfg: RunConfig, out: Outputs, args) -> int:
    sec = cfg.section("chaos-scan")
    n, block = int(sec.get("n", 8)), int(sec.get("block", 4))
    rows = []
    for beta2 in [float(b) for b in sec.get("beta2_grid", [cfg.beta2])]:
        if beta2 == cfg.beta1:
            rows.append(dict(beta1=cfg.beta1, beta2=beta2, n=n, chi=None, var=None, chi_se=None,
                             flag="excluded by hypothesis"))
            continue
        seeds = [d for s in cfg.seeds for d in block_seeds(s, block)]
        st = overlap_statistics(_ensembles(cfg, n, seeds, beta2=beta2, mode="exact"))
        chi, var = estimate_chi(st)
        rows.append(dict(beta1=cfg.beta1, beta2=beta2, n=n, chi=chi, var=var, chi_se=st.chi_se, flag=""))
    out.json("chaos.json", dict(rows=rows), SCHEMAS["chaos-scan"])
    out.csv("chaos.csv", rows)
    return EXIT_OK


def cmd_verify(cfg: RunConfig, out: Outputs, args) -> int:
    only = args.only if args.only else cfg.section("verify").get("only")
    only = [int(k) for k in only] if only else None
    if only and any(k not in acceptance.CRITERIA for k in only):
        raise ConfigError(f"unknown criteria in {only}")
    results = acceptance.run(only, log=lambda line: print(line, flush=True))
    ok = all(r.passed for r in results)
    out.json("acceptance.json", dict(criteria=[r.to_dict() for r in results], all_passed=ok), SCHEMAS["verify"])
    out.csv("acceptance.csv", [dict(number=r.number, title=r.title, passed=r.passed, seconds=r.seconds,
                                    summary=r.summary) for r in results])
    print(f"{sum(r.passed for r in results)}/{len(results)} criteria passed")
    return EXIT_OK if ok else EXIT_ACCEPTANCE


HANDLERS = {
    "parisi-solve": cmd_parisi_solve,
    "parisi-fit": cmd_parisi_fit,
    "coupled-bound": cmd_coupled_bound,
    "sde-check": cmd_sde_check,
    "mc-run": cmd_mc_run,
    "gg-check": cmd_gg_check,
    "chaos-scan": cmd_chaos_scan,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="YAML run configuration (defaults are used for missing keys)")
    common.add_argument("-o", "--output-dir", help=f"output directory (overridden by ${OUTPUT_ENV})")
    parser = argparse.ArgumentParser(prog="chaostemp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common], help=HANDLERS[name].__name__.replace("cmd_", "").replace("_", " "))
        if name == "verify":
            p.add_argument("--only", type=lambda s: [int(t) for t in s.split(",") if t],
                           help="comma-separated criterion numbers")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.output_dir)
    except ConfigError as exc:
        print(json.dumps(dict(error="config", message=str(exc), exit_code=EXIT_CONFIG)), file=sys.stderr)
        return EXIT_CONFIG
    out = Outputs(cfg, args.command)
    try:
        code = HANDLERS[args.command](cfg, out, args)
    except ConfigError as exc:
        return _fail(out, "config", exc, EXIT_CONFIG)
    except NUMERIC_ERRORS as exc:
        return _fail(out, "numerical", exc, EXIT_NUMERIC)
    except jsonschema.ValidationError as exc:
        return _fail(out, "schema", exc, EXIT_NUMERIC)
    out.manifest("complete" if code == EXIT_OK else "failed")
    return code


def _fail(out: Outputs, kind: str, exc: Exception, code: int) -> int:
    err = dict(error=kind, type=type(exc).__name__, message=str(exc), exit_code=code)
    print(json.dumps(err), file=sys.stderr)
    out.manifest("partial", error=err)
    return code


if __name__ == "__main__":
    sys.exit(main())
