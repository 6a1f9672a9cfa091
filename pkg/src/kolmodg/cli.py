"""Configuration-driven entry point: solver runs, verification lab, tables.

    kolmo-dg <experiment> [--config FILE] [--out DIR] [--test-constants]

with experiment one of run, decay, constants, coercivity, infsup, kappa,
convergence.  Configuration is a JSON file; every field has a default, so a
bare experiment name runs a small canonical instance.  Outputs are CSV files
plus a summary.json whose `paper_checks` array lists {name, margin,
threshold, verdict} for every certified inequality.  Exit codes: 0 all
checks pass, 1 some check failed, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import io
import json
import os
import sys
import tempfile
from dataclasses import dataclass, field

import numpy as np

from . import hypolab
from .coeffs import build_coeffs
from .hypolab import Setup
from .march import TimeGrid, march, project_initial
from .mesh import Domain
from .polyspace import compute_inverse_constants

EXPERIMENTS = ("run", "decay", "constants", "coercivity", "infsup", "kappa",
               "convergence")

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"config error at {path}: {message}")
        self.path = path


@dataclass
class RunConfig:
    experiment: str
    domain: tuple[float, float, float, float] = (0.0, 1.0, 0.0, 1.0)
    nx: int = 4
    ny: int = 4
    p: int = 1
    q: int = 0
    k: float = 0.1
    n_steps: int = 10
    t_f: float | None = None
    u0: object = "sine"
    forcing: str = "zero"
    out_dir: str = "kolmo_out"
    test_constants: bool = False
    seed: int = 0
    margin_rtol: float = 1e-8
    identity_rtol: float = 1e-11
    decay_tol: float = 1e-10
    sweep_nx: tuple[int, ...] = (2, 4, 8)
    sweep_p: tuple[int, ...] = (1, 2, 3)
    sweep_q: tuple[int, ...] = (0, 1, 2)
    sweep_k: tuple[float, ...] = (0.1, 0.01)
    degrees: tuple[int, ...] = (0, 1, 2, 3, 4)
    levels: tuple[tuple[int, int], ...] = ((2, 4), (4, 8), (8, 16))
    n_slabs: int = 2
    n_samples: int = 100

    @property
    def timestep(self) -> float:
        if self.t_f is not None:
            return self.t_f / self.n_steps
        return self.k

    def domain_obj(self) -> Domain:
        return Domain(*self.domain)


def _require(cond: bool, path: str, message: str):
    if not cond:
        raise ConfigError(path, message)


def _positive_int(val, path, minimum=1) -> int:
    _require(isinstance(val, int) and not isinstance(val, bool), path, "expected an integer")
    _require(val >= minimum, path, f"must be >= {minimum}")
    return val


def _positive_real(val, path) -> float:
    _require(isinstance(val, (int, float)) and not isinstance(val, bool), path,
             "expected a number")
    _require(val > 0, path, "must be positive")
    return float(val)


def parse_config(experiment: str, data: dict | None = None) -> RunConfig:
    """Validate a JSON config dict; unknown keys and bad values exit code 2."""
    if experiment not in EXPERIMENTS:
        hint = min(EXPERIMENTS, key=lambda e: _edit_distance(experiment, e))
        raise ConfigError("experiment", f"unknown kind {experiment!r}; did you mean {hint!r}?")
    cfg = RunConfig(experiment)
    if not data:
        return cfg
    _require(isinstance(data, dict), "$", "top level must be an object")
    known = {
        "domain", "nx", "ny", "p", "q", "k", "n_steps", "t_f", "u0", "forcing",
        "out", "test_constants", "seed", "tolerances", "sweep", "degrees",
        "levels", "n_slabs", "n_samples", "experiment",
    }
    for key in data:
        _require(key in known, key, "unknown field")
    if "experiment" in data:
        _require(data["experiment"] == experiment, "experiment",
                 f"config names {data['experiment']!r} but {experiment!r} was requested")
    if "domain" in data:
        dom = data["domain"]
        _require(isinstance(dom, (list, tuple)) and len(dom) == 4, "domain",
                 "expected [x_lo, x_hi, y_lo, y_hi]")
        _require(all(isinstance(v, (int, float)) for v in dom), "domain", "expected numbers")
        _require(dom[0] < dom[1] and dom[2] < dom[3], "domain",
                 "needs x_lo < x_hi and y_lo < y_hi")
        cfg.domain = tuple(float(v) for v in dom)
    if "nx" in data:
        cfg.nx = _positive_int(data["nx"], "nx")
        cfg.ny = cfg.nx
    if "ny" in data:
        cfg.ny = _positive_int(data["ny"], "ny")
    if "p" in data:
        cfg.p = _positive_int(data["p"], "p", minimum=0)
    if "q" in data:
        cfg.q = _positive_int(data["q"], "q", minimum=0)
    if "k" in data:
        cfg.k = _positive_real(data["k"], "k")
    if "n_steps" in data:
        cfg.n_steps = _positive_int(data["n_steps"], "n_steps")
    if "t_f" in data and data["t_f"] is not None:
        cfg.t_f = _positive_real(data["t_f"], "t_f")
    if "u0" in data:
        cfg.u0 = _validate_u0(data["u0"])
    if "forcing" in data:
        _require(data["forcing"] in ("zero", "manufactured"), "forcing",
                 "expected 'zero' or 'manufactured'")
        cfg.forcing = data["forcing"]
    if "out" in data:
        _require(isinstance(data["out"], str), "out", "expected a path string")
        cfg.out_dir = data["out"]
    if "test_constants" in data:
        _require(isinstance(data["test_constants"], bool), "test_constants",
                 "expected a boolean")
        cfg.test_constants = data["test_constants"]
    if "seed" in data:
        cfg.seed = _positive_int(data["seed"], "seed", minimum=0)
    if "tolerances" in data:
        tol = data["tolerances"]
        _require(isinstance(tol, dict), "tolerances", "expected an object")
        for key in tol:
            _require(key in ("margin_rtol", "identity_rtol", "decay_tol"),
                     f"tolerances.{key}", "unknown tolerance")
            setattr(cfg, key, _positive_real(tol[key], f"tolerances.{key}"))
    if "sweep" in data:
        sw = data["sweep"]
        _require(isinstance(sw, dict), "sweep", "expected an object")
        for key in sw:
            _require(key in ("nx", "p", "q", "k"), f"sweep.{key}", "unknown sweep axis")
            vals = sw[key]
            _require(isinstance(vals, (list, tuple)) and vals, f"sweep.{key}",
                     "expected a non-empty list")
            if key == "k":
                setattr(cfg, "sweep_k", tuple(_positive_real(v, f"sweep.k[{i}]")
                                              for i, v in enumerate(vals)))
            else:
                setattr(cfg, f"sweep_{key}",
                        tuple(_positive_int(v, f"sweep.{key}[{i}]", minimum=0 if key == "q" else 1)
                              for i, v in enumerate(vals)))
    if "degrees" in data:
        vals = data["degrees"]
        _require(isinstance(vals, (list, tuple)) and vals, "degrees",
                 "expected a non-empty list")
        cfg.degrees = tuple(_positive_int(v, f"degrees[{i}]", minimum=0)
                            for i, v in enumerate(vals))
    if "levels" in data:
        vals = data["levels"]
        _require(isinstance(vals, (list, tuple)) and len(vals) >= 2, "levels",
                 "expected a list of at least two [nx, n_steps] pairs")
        out = []
        for i, pair in enumerate(vals):
            _require(isinstance(pair, (list, tuple)) and len(pair) == 2,
                     f"levels[{i}]", "expected [nx, n_steps]")
            out.append((_positive_int(pair[0], f"levels[{i}][0]"),
                        _positive_int(pair[1], f"levels[{i}][1]")))
        cfg.levels = tuple(out)
    if "n_slabs" in data:
        cfg.n_slabs = _positive_int(data["n_slabs"], "n_slabs")
    if "n_samples" in data:
        cfg.n_samples = _positive_int(data["n_samples"], "n_samples")
    return cfg


def _validate_u0(val):
    if isinstance(val, str):
        _require(val in ("zero", "one", "sine", "sine2"), "u0",
                 "expected zero|one|sine|sine2 or {'poly': [[i, j, c], ...]}")
        return val
    _require(isinstance(val, dict) and set(val) == {"poly"}, "u0",
             "expected a preset name or {'poly': [[i, j, c], ...]}")
    terms = val["poly"]
    _require(isinstance(terms, (list, tuple)) and terms, "u0.poly",
             "expected a non-empty list of [i, j, c]")
    out = []
    for n, term in enumerate(terms):
        _require(isinstance(term, (list, tuple)) and len(term) == 3,
                 f"u0.poly[{n}]", "expected [i, j, c]")
        i, j, c = term
        _require(isinstance(i, int) and isinstance(j, int) and i >= 0 and j >= 0,
                 f"u0.poly[{n}]", "exponents must be non-negative integers")
        _require(isinstance(c, (int, float)), f"u0.poly[{n}]", "coefficient must be a number")
        out.append((i, j, float(c)))
    return {"poly": out}


def _edit_distance(a: str, b: str) -> int:
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[-1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def u0_callable(spec):
    if spec == "zero":
        return lambda x, y: np.zeros_like(np.asarray(x, dtype=float))
    if spec == "one":
        return lambda x, y: np.ones_like(np.asarray(x, dtype=float))
    if spec == "sine":
        return lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y)
    if spec == "sine2":
        return lambda x, y: np.sin(np.pi * x) ** 2 * np.sin(np.pi * y)
    terms = spec["poly"]
    return lambda x, y: sum(c * np.asarray(x) ** i * np.asarray(y) ** j
                            for i, j, c in terms)


# -- output helpers -------------------------------------------------------------


def _write_atomic(path: str, text: str):
    directory = os.path.dirname(path) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def _fmt(x: float) -> str:
    return "%.17g" % x


class Summary:
    """Collects {name, margin, threshold, verdict} rows for summary.json."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.checks: list[dict] = []
        self.extra: dict = {}

    def add(self, name: str, margin: float, threshold: float):
        self.checks.append({
            "name": name,
            "margin": margin,
            "threshold": threshold,
            "verdict": "PASS" if margin >= threshold else "FAIL",
        })

    @property
    def all_pass(self) -> bool:
        return all(c["verdict"] == "PASS" for c in self.checks)

    def write(self, out_dir: str):
        payload = {
            "experiment": self.config.experiment,
            "paper_checks": self.checks,
            **self.extra,
        }
        _write_atomic(os.path.join(out_dir, "summary.json"),
                      json.dumps(payload, indent=2, sort_keys=True) + "\n")


# -- experiments ----------------------------------------------------------------


def _setup(cfg: RunConfig, k: float | None = None, q: int | None = None) -> Setup:
    return Setup.create(cfg.domain_obj(), cfg.nx, cfg.ny, cfg.p,
                        test_mode=cfg.test_constants, k=k, q=q)


def _exp_run(cfg: RunConfig, summary: Summary) -> dict[str, str]:
    setup = _setup(cfg, k=cfg.timestep, q=cfg.q)
    u0 = project_initial(setup.forms, u0_callable(cfg.u0))
    f = None
    if cfg.forcing == "manufactured":
        _, f = hypolab.manufactured_solution()
    grid = TimeGrid.uniform(cfg.timestep, cfg.n_steps)
    result = march(setup.forms, grid, cfg.q, u0, f=f)
    summary.extra["t_final"] = grid.t_final
    summary.extra["final_l2_norm"] = result.trace.l2_norm[-1]
    return {"decay.csv": result.trace.to_csv(),
            "mesh.json": setup.mesh.to_json()}


def _exp_decay(cfg: RunConfig, summary: Summary) -> dict[str, str]:
    setup = _setup(cfg, k=cfg.timestep, q=cfg.q)
    rep = hypolab.decay_experiment(setup.forms, cfg.q, cfg.timestep, cfg.n_steps,
                                   u0_callable(cfg.u0), tol=cfg.decay_tol)
    for check in rep.checks:
        summary.add(check.name, check.margin, check.threshold)
    summary.extra.update({
        "kappa_num": rep.kappa_num,
        "per_step_bound_factor": rep.bound_factor,
        "exponential_limit_at_t_f": rep.exp_limit,
        "baseline_l2_guaranteed_factor": 1.0,
        "observed_a_factors_minmax": [min(rep.step_factors_a, default=1.0),
                                      max(rep.step_factors_a, default=1.0)],
        "observed_l2_factors_minmax": [min(rep.step_factors_l2, default=1.0),
                                       max(rep.step_factors_l2, default=1.0)],
    })
    return {"decay.csv": rep.trace.to_csv()}


def _exp_constants(cfg: RunConfig, summary: Summary) -> dict[str, str]:
    setup = _setup(cfg)
    buf = io.StringIO()
    buf.write("p,C_trace,C_grad\n")
    for p in cfg.degrees:
        c = compute_inverse_constants(setup.mesh, p, cfg.test_constants)
        buf.write("%d,%s,%s\n" % (p, _fmt(c.c_trace), _fmt(c.c_grad)))
    summary.extra["degrees"] = list(cfg.degrees)
    return {"constants.csv": buf.getvalue(),
            "coeffs.csv": setup.coeffs.to_csv(setup.mesh)}


def _exp_coercivity(cfg: RunConfig, summary: Summary) -> dict[str, str]:
    buf = io.StringIO()
    buf.write("check,nx,p,q,k,margin,scale,rel_margin,verdict\n")
    worst = np.inf
    for p in cfg.sweep_p:
        for nx in cfg.sweep_nx:
            setup = Setup.create(cfg.domain_obj(), nx, nx, p,
                                 test_mode=cfg.test_constants)
            margin, scale = hypolab.check_semi_positivity(setup.forms)
            rel = margin / scale
            worst = min(worst, rel)
            verdict = "PASS" if rel >= -cfg.margin_rtol else "FAIL"
            buf.write("semi,%d,%d,,,%s,%s,%s,%s\n"
                      % (nx, p, _fmt(margin), _fmt(scale), _fmt(rel), verdict))
            for q in cfg.sweep_q:
                for k in cfg.sweep_k:
                    st = Setup.create(cfg.domain_obj(), nx, nx, p,
                                      test_mode=cfg.test_constants, k=k, q=q)
                    margin, scale = hypolab.check_fulldiscrete_coercivity(st.forms, q, k)
                    rel = margin / scale
                    worst = min(worst, rel)
                    verdict = "PASS" if rel >= -cfg.margin_rtol else "FAIL"
                    buf.write("slab,%d,%d,%d,%s,%s,%s,%s,%s\n"
                              % (nx, p, q, _fmt(k), _fmt(margin), _fmt(scale),
                                 _fmt(rel), verdict))
    summary.add("coercivity_sweep_worst_rel_margin", float(worst), -cfg.margin_rtol)
    return {"margins.csv": buf.getvalue()}


def _exp_infsup(cfg: RunConfig, summary: Summary) -> dict[str, str]:
    rng = np.random.default_rng(cfg.seed)
    buf = io.StringIO()
    buf.write("nx,p,q,k,n_slabs,n_dofs,lambda_h,max_test_ratio,min_onesided\n")
    lams = []
    min_onesided = np.inf
    for p in cfg.sweep_p:
        for nx in cfg.sweep_nx:
            for q in cfg.sweep_q:
                for k in cfg.sweep_k:
                    setup = Setup.create(cfg.domain_obj(), nx, nx, p,
                                         test_mode=cfg.test_constants, k=k, q=q)
                    n_dofs = setup.space.n_dofs * (q + 1) * cfg.n_slabs
                    if n_dofs > hypolab.INFSUP_DOF_GUARD:
                        continue
                    rep = hypolab.compute_infsup(setup.forms, q, k, cfg.n_slabs,
                                                 n_samples=cfg.n_samples, rng=rng)
                    lams.append(rep.lambda_h)
                    min_onesided = min(min_onesided, rep.min_onesided)
                    buf.write("%d,%d,%d,%s,%d,%d,%s,%s,%s\n"
                              % (nx, p, q, _fmt(k), cfg.n_slabs, rep.n_dofs,
                                 _fmt(rep.lambda_h), _fmt(rep.max_test_ratio),
                                 _fmt(rep.min_onesided)))
    if not lams:
        raise RuntimeError("inf-sup sweep empty: all instances above the dof guard")
    summary.add("onesided_certificate", min_onesided - 1.0, -cfg.margin_rtol)
    summary.add("lambda_floor", min(lams), 1e-6)
    summary.add("lambda_variation_under_10x", 10.0 - max(lams) / min(lams), 0.0)
    summary.extra["lambda_h_range"] = [min(lams), max(lams)]
    return {"infsup.csv": buf.getvalue()}


def _exp_kappa(cfg: RunConfig, summary: Summary) -> dict[str, str]:
    buf = io.StringIO()
    buf.write("nx,p,kappa_num,kappa_formula,C_bPF,delta_max,branch\n")
    slope_ok = np.inf
    for p in cfg.sweep_p:
        gaps = []
        for nx in cfg.sweep_nx:
            setup = Setup.create(cfg.domain_obj(), nx, nx, p,
                                 test_mode=cfg.test_constants)
            gap = hypolab.estimate_kappa(setup.forms)
            gaps.append((setup.mesh.h_min, gap))
            summary.add(f"kappa_positive_p{p}_nx{nx}", gap.kappa_num, 1e-300)
            summary.add(f"kappa_vs_formula_p{p}_nx{nx}",
                        gap.kappa_num - gap.kappa_formula, 0.0)
            buf.write("%d,%d,%s,%s,%s,%s,%s\n"
                      % (nx, p, _fmt(gap.kappa_num), _fmt(gap.kappa_formula),
                         _fmt(gap.c_bpf_num), _fmt(gap.delta_max), gap.gap_branch))
        delta_pairs = [(h, g) for h, g in gaps if g.gap_branch == "delta"]
        if len(delta_pairs) >= 2:
            (h1, g1), (h2, g2) = delta_pairs[-2], delta_pairs[-1]
            slope = np.log(g1.kappa_formula / g2.kappa_formula) / np.log(h1 / h2)
            slope_ok = min(slope_ok, 0.2 - abs(slope - 4.0))
            summary.extra[f"formula_slope_p{p}"] = slope
    if np.isfinite(slope_ok):
        summary.add("formula_slope_within_0.2_of_4", float(slope_ok), 0.0)
    return {"kappa.csv": buf.getvalue()}


def _exp_convergence(cfg: RunConfig, summary: Summary) -> dict[str, str]:
    rep = hypolab.manufactured_convergence(levels=cfg.levels, p=cfg.p, q=max(cfg.q, 1),
                                           t_f=cfg.t_f or 0.4,
                                           test_mode=cfg.test_constants,
                                           domain=cfg.domain_obj())
    summary.add("errors_monotone", 1.0 if rep.monotone else -1.0, 0.0)
    summary.add("eoc_at_least_1.5", min(rep.eocs) - 1.5, 0.0)
    summary.extra["eocs"] = rep.eocs
    return {"convergence.csv": rep.to_csv()}


_RUNNERS = {
    "run": _exp_run,
    "decay": _exp_decay,
    "constants": _exp_constants,
    "coercivity": _exp_coercivity,
    "infsup": _exp_infsup,
    "kappa": _exp_kappa,
    "convergence": _exp_convergence,
}


def run_experiment(cfg: RunConfig) -> int:
    """Execute one experiment, write its artifacts, and return the exit code."""
    summary = Summary(cfg)
    try:
        files = _RUNNERS[cfg.experiment](cfg, summary)
    except Exception as exc:  # noqa: BLE001 - single reporting point
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for name, text in files.items():
        _write_atomic(os.path.join(cfg.out_dir, name), text)
    summary.write(cfg.out_dir)
    for check in summary.checks:
        print("%-40s margin=% .6e threshold=% .1e %s"
              % (check["name"], check["margin"], check["threshold"], check["verdict"]))
    return EXIT_PASS if summary.all_pass else EXIT_FAIL


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="kolmo-dg",
        description="Space-time dG solver and stability laboratory for the "
                    "Kolmogorov equation u_t - u_xx + x u_y = f.")
    parser.add_argument("experiment", help="one of: " + ", ".join(EXPERIMENTS))
    parser.add_argument("--config", help="JSON configuration file")
    parser.add_argument("--out", help="output directory (overrides config)")
    parser.add_argument("--test-constants", action="store_true",
                        help="override the inverse constants to 1 (deterministic tests)")
    args = parser.parse_args(argv)
    try:
        data = None
        if args.config:
            try:
                with open(args.config) as handle:
                    data = json.load(handle)
            except OSError as exc:
                raise ConfigError("config", f"cannot read {args.config}: {exc}")
            except json.JSONDecodeError as exc:
                raise ConfigError("config", f"invalid JSON: {exc}")
        cfg = parse_config(args.experiment, data)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    if args.out:
        cfg.out_dir = args.out
    if args.test_constants:
        cfg.test_constants = True
    return run_experiment(cfg)


if __name__ == "__main__":
    sys.exit(main())
