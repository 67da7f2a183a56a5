"""Batch runner: ``onelap <mode> --config <path> [--out <dir>]``.

Exit codes: 0 success, 1 config error, 2 certificate FAIL (certify mode),
3 solver non-convergence.  Errors are reported as one JSON object on stderr.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .certificate import (CertificateReport, InvalidCandidate, TestFamily, Thresholds,
                          certify, condition_verdicts)
from .continuation import AllSolvesFailed, ContinuationResult, Schedule, run_schedule
from .grid import Grid, build_grid, flux_inf_norm, total_variation
from .oracle import PRESETS_1D, constant_solution, oracle_pairs, preset_f, sample_pair
from .psolver import InvalidConfig, NonConvergenceWarning, ProblemSpec, PSolveConfig, solve_p_problem

log = logging.getLogger(__name__)

MODES = ("solve", "continue", "certify", "compare")
EXIT_OK, EXIT_CONFIG, EXIT_FAIL, EXIT_NONCONV = 0, 1, 2, 3


class ConfigError(Exception):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
        self.message = message


class RunFailure(Exception):
    """Carries a non-config exit code and an error payload."""

    def __init__(self, code: int, kind: str, message: str):
        super().__init__(message)
        self.code, self.kind, self.message = code, kind, message


def load_schema(name: str) -> dict:
    text = resources.files("onelap").joinpath("schemas", f"{name}.schema.json").read_text()
    return json.loads(text)


def validate(doc: dict, name: str) -> None:
    """Raise ConfigError naming the offending field (dotted path)."""
    schema = load_schema(name)
    err = jsonschema.exceptions.best_match(jsonschema.Draft202012Validator(schema).iter_errors(doc))
    if err is None:
        return
    path = ".".join(str(p) for p in err.absolute_path)
    if err.validator == "required":
        missing = next((r for r in err.validator_value if r not in err.instance), None)
        if missing is not None:
            path = f"{path}.{missing}" if path else missing
    raise ConfigError(path or "<root>", err.message)


def load_config(path) -> dict:
    path = Path(path)
    try:
        cfg = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError("--config", f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("--config", f"invalid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    validate(cfg, "config")
    return cfg


def _require(cfg: dict, dotted: str):
    node = cfg
    for key in dotted.split("."):
        if not isinstance(node, dict) or key not in node:
            raise ConfigError(dotted, f"'{key}' is a required property")
        node = node[key]
    return node


# -- config -> module objects ---------------------------------------------

def make_grid(cfg: dict) -> Grid:
    prob = _require(cfg, "problem")
    n = _require(cfg, "problem.n")
    extents = prob.get("extents", [[-1.0, 1.0]])
    if isinstance(n, list) and len(n) not in (1, len(extents)):
        raise ConfigError("problem.n", "need one node count per axis")
    try:
        return build_grid(extents, n)
    except ValueError as exc:
        raise ConfigError("problem.extents", str(exc)) from exc


def make_problem(cfg: dict, g: Grid | None = None) -> ProblemSpec:
    g = g or make_grid(cfg)
    f_cfg = _require(cfg, "problem.f")
    gamma = float(_require(cfg, "problem.gamma"))
    if isinstance(f_cfg, str):
        try:
            f, name = preset_f(f_cfg, g), f_cfg
        except KeyError as exc:
            raise ConfigError("problem.f", str(exc.args[0])) from exc
    else:
        f, name = np.asarray(f_cfg, dtype=float), None
        if f.size != g.node_count:
            raise ConfigError("problem.f", f"{f.size} values for {g.node_count} nodes")
        f = f.reshape(g.shape)
    try:
        return ProblemSpec(g, f, gamma, f_name=name)
    except InvalidConfig as exc:
        raise ConfigError("problem.f", str(exc)) from exc


def make_solver(cfg: dict) -> tuple[PSolveConfig, list[float]]:
    s = dict(cfg.get("solver", {}))
    p = s.pop("p", 1.5)
    p_list = [float(v) for v in p] if isinstance(p, list) else [float(p)]
    try:
        return PSolveConfig(p=p_list[0], **s), p_list
    except InvalidConfig as exc:
        raise ConfigError("solver", str(exc)) from exc


def make_schedule(cfg: dict) -> tuple[Schedule, str]:
    s = cfg.get("schedule", {})
    eps = s.get("eps_values", "auto")
    try:
        sched = Schedule(p_values=tuple(s.get("p_values", Schedule().p_values)),
                         eps_values=None if eps == "auto" else tuple(eps),
                         warm_start=s.get("warm_start", True))
    except ValueError as exc:
        raise ConfigError("schedule", str(exc)) from exc
    return sched, s.get("estimator", "last")


def make_thresholds(cfg: dict, g: Grid, eps_last: float = 0.0) -> tuple[Thresholds, TestFamily]:
    c = cfg.get("certificate", {})
    th = Thresholds.default(g, eps_last=eps_last, tolerance=c.get("tolerance"))
    th = replace(th, theta=c.get("theta", th.theta), theta_f=c.get("theta_f", th.theta_f),
                 overrides=dict(c.get("overrides", {})))
    return th, TestFamily(seed=c.get("seed"))


def thread_count(n_tasks: int) -> int:
    raw = os.environ.get("ONELAP_THREADS")
    if raw is None:
        return max(1, min(n_tasks, os.cpu_count() or 1))
    try:
        k = int(raw)
    except ValueError as exc:
        raise ConfigError("ONELAP_THREADS", f"not an integer: {raw!r}") from exc
    if k < 1:
        raise ConfigError("ONELAP_THREADS", "must be at least 1")
    return min(k, max(n_tasks, 1))


# -- serialization ----------------------------------------------------------

def grid_dict(g: Grid) -> dict:
    return {"extents": [list(e) for e in g.extents], "n": list(g.n), "h": list(g.h)}


def node_flux(z: np.ndarray, g: Grid) -> list[np.ndarray]:
    """Per-axis average of the two faces around each node."""
    out = []
    for axis, za in enumerate(g.split_faces(z)):
        lo = [slice(None)] * g.dim
        hi = [slice(None)] * g.dim
        lo[axis], hi[axis] = slice(None, -1), slice(1, None)
        out.append(0.5 * (za[tuple(lo)] + za[tuple(hi)]))
    return out


def write_fields_csv(path: Path, u: np.ndarray, z: np.ndarray, g: Grid) -> None:
    coords = g.node_coords()
    names = ["x", "y"][:g.dim]
    zn = node_flux(z, g)
    znames = ["z"] if g.dim == 1 else ["z_x", "z_y"]
    cols = [c.ravel() for c in coords] + [np.asarray(u).ravel()] + [c.ravel() for c in zn]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names + ["u"] + znames)
        # tolist() gives Python floats, whose str() round-trips exactly
        w.writerows(np.column_stack(cols).tolist())


def write_json(path: Path, doc: dict, schema: str | None = None) -> None:
    if schema is not None:
        jsonschema.validate(doc, load_schema(schema))
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _clean(v):
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if np.isfinite(v) else None
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def record_dict(p, eps, sol, g: Grid, excess_l1=None) -> dict:
    return {"p": p, "eps": eps, "converged": bool(sol.converged), "iterations": sol.iterations,
            "picard_steps": sol.picard_steps, "residual": sol.residual,
            "tv": total_variation(sol.u, g), "u_max": float(np.max(sol.u)),
            "z_max": flux_inf_norm(sol.z, g), "excess_l1": excess_l1}


def report_dict(report: CertificateReport, candidate: str) -> dict:
    d = report.to_dict()
    defects = {k: d[k] for k in d if k.startswith("defect_")}
    defects.update(interface_count=d["interface_count"], perimeter=d["perimeter"],
                   singular_l1=d["singular_l1"], interface_flux_mass=d["interface_flux_mass"])
    return _clean({"candidate": candidate, "defects": defects, "thresholds": d["thresholds"],
                   "verdicts": d["verdicts"], "conditions": condition_verdicts(report),
                   "passed": report.passed, "verdict": "PASS" if report.passed else "FAIL"})


# -- modes ------------------------------------------------------------------

@dataclass
class RunOutput:
    code: int
    grid: Grid
    u: np.ndarray
    z: np.ndarray
    diagnostics: dict | None = None
    report: dict | None = None
    comparison: dict | None = None


def _oracle_error(spec: ProblemSpec, u: np.ndarray) -> dict | None:
    g = spec.grid
    if g.dim != 1 or g.extents[0] != (-1.0, 1.0) or spec.f_name not in PRESETS_1D:
        return None
    pair = constant_solution(PRESETS_1D[spec.f_name](), spec.gamma)
    if pair is None:
        return None
    c = float(pair.u(0.0))
    return {"name": pair.name, "c": c, "l1_error": g.cell_volume * float(np.sum(np.abs(u - c))),
            "linf_error": float(np.max(np.abs(u - c)))}


def run_solve(cfg: dict) -> RunOutput:
    spec = make_problem(cfg)
    g = spec.grid
    base, p_list = make_solver(cfg)

    def one(p):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", NonConvergenceWarning)
            t0 = time.perf_counter()
            sol = solve_p_problem(spec, replace(base, p=p))
            return sol, time.perf_counter() - t0

    t0 = time.perf_counter()
    workers = thread_count(len(p_list))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            sols = list(ex.map(one, p_list))
    else:
        sols = [one(p) for p in p_list]
    records = [record_dict(p, base.eps, s, g) for p, (s, _) in zip(p_list, sols)]
    last = sols[-1][0]
    diag = {"mode": "solve", "grid": grid_dict(g), "gamma": spec.gamma, "f_name": spec.f_name,
            "records": records, "oracle": _oracle_error(spec, last.u),
            "fields": {"u": last.u.ravel().tolist(), "z": last.z.tolist()},
            "timings": {**{f"p={p}": dt for p, (_, dt) in zip(p_list, sols)},
                        "total": time.perf_counter() - t0}}
    code = EXIT_OK if all(s.converged for s, _ in sols) else EXIT_NONCONV
    return RunOutput(code, g, last.u, last.z, diagnostics=_clean(diag))


def _continuation(cfg: dict, spec: ProblemSpec) -> tuple[ContinuationResult, float]:
    base, _ = make_solver(cfg)
    sched, estimator = make_schedule(cfg)
    t0 = time.perf_counter()
    try:
        res = run_schedule(spec, sched, base, estimator=estimator)
    except AllSolvesFailed as exc:
        raise RunFailure(EXIT_NONCONV, "nonconvergence", str(exc)) from exc
    return res, time.perf_counter() - t0


def _continuation_diag(res: ContinuationResult, mode: str, seconds: float) -> dict:
    spec, g = res.spec, res.grid
    return {"mode": mode, "grid": grid_dict(g), "gamma": spec.gamma, "f_name": spec.f_name,
            "records": [record_dict(r.p, r.eps, r.solution, g, r.excess_norm) for r in res.records],
            "limit": {"estimator": res.estimator, "clip": res.clip,
                      "p_last": res.converged_records()[-1].p},
            "oracle": _oracle_error(spec, res.u_star),
            "fields": {"u": res.u_star.ravel().tolist(), "z": res.z_star.tolist()},
            "timings": {**{f"p={r.p}": r.seconds for r in res.records}, "total": seconds}}


def run_continue(cfg: dict) -> RunOutput:
    spec = make_problem(cfg)
    res, dt = _continuation(cfg, spec)
    diag = _continuation_diag(res, "continue", dt)
    th, fam = make_thresholds(cfg, spec.grid, eps_last=res.converged_records()[-1].eps)
    report = None
    try:
        rep = certify(res.u_star, res.z_star, spec, th, fam)
        report = report_dict(rep, "continuation")
        diag["certificate"] = {"verdict": report["verdict"], "conditions": report["conditions"]}
    except InvalidCandidate as exc:
        diag["certificate"] = {"verdict": "FAIL", "error": str(exc)}
    code = EXIT_OK if all(r.converged for r in res.records) else EXIT_NONCONV
    return RunOutput(code, spec.grid, res.u_star, res.z_star, _clean(diag), report)


def _oracle_candidate(cand: dict, g: Grid):
    name = cand["oracle"]
    try:
        pairs = oracle_pairs(name)
    except (KeyError, ValueError) as exc:
        raise ConfigError("candidate.oracle", str(exc.args[0])) from exc
    idx = cand.get("index", 0)
    if idx >= len(pairs):
        raise ConfigError("candidate.index", f"{name!r} has {len(pairs)} pairs")
    pair = pairs[idx]
    try:
        u, z, f = sample_pair(pair, g)
    except ValueError as exc:
        raise ConfigError("problem.extents", str(exc)) from exc
    return pair, u, z, f


def load_run(path: Path) -> tuple[dict, np.ndarray, np.ndarray]:
    doc_path = path / "diagnostics.json" if path.is_dir() else path
    try:
        doc = json.loads(doc_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(str(path), f"cannot load run: {exc}") from exc
    return doc["grid"], np.asarray(doc["fields"]["u"], float), np.asarray(doc["fields"]["z"], float)


def _same_grid(g: Grid, gd: dict) -> bool:
    return [list(e) for e in g.extents] == gd["extents"] and list(g.n) == gd["n"]


def run_certify(cfg: dict, base_dir: Path) -> RunOutput:
    g = make_grid(cfg)
    cand = cfg.get("candidate", {})
    diag_extra, records, timings = {}, [], {}
    if "oracle" in cand:
        pair, u, z, f = _oracle_candidate(cand, g)
        spec = ProblemSpec(g, f, pair.gamma, f_name=pair.name)
        label, eps_last = pair.name, 0.0
    elif "run" in cand:
        spec = make_problem(cfg, g)
        gd, u, z = load_run(base_dir / cand["run"])
        if not _same_grid(g, gd):
            raise ConfigError("candidate.run", "grid of the stored run differs from problem")
        u = u.reshape(g.shape)
        label, eps_last = cand["run"], 0.0
    else:
        spec = make_problem(cfg, g)
        res, dt = _continuation(cfg, spec)
        cont = _continuation_diag(res, "certify", dt)
        records, timings = cont["records"], cont["timings"]
        diag_extra = {"limit": cont["limit"], "oracle": cont["oracle"]}
        u, z = res.u_star, res.z_star
        label, eps_last = "continuation", res.converged_records()[-1].eps
    th, fam = make_thresholds(cfg, g, eps_last=eps_last)
    t0 = time.perf_counter()
    try:
        rep = certify(u, z, spec, th, fam)
    except InvalidCandidate as exc:
        raise RunFailure(EXIT_FAIL, "invalid_candidate", str(exc)) from exc
    timings["certify"] = time.perf_counter() - t0
    report = report_dict(rep, label)
    diag = {"mode": "certify", "grid": grid_dict(g), "gamma": spec.gamma, "f_name": spec.f_name,
            "records": records, **diag_extra,
            "certificate": {"verdict": report["verdict"], "conditions": report["conditions"]},
            "fields": {"u": np.asarray(u).ravel().tolist(), "z": np.asarray(z).tolist()},
            "timings": timings}
    code = EXIT_OK if rep.passed else EXIT_FAIL
    if any(not r["converged"] for r in records) and code == EXIT_OK:
        code = EXIT_NONCONV
    return RunOutput(code, g, np.asarray(u), np.asarray(z), _clean(diag), report)


def _resolve_source(src, key: str, cfg: dict, base_dir: Path):
    """(label, grid dict, u, z, exit code) for one side of a comparison."""
    if isinstance(src, dict):
        g = make_grid(cfg)
        pair, u, z, _ = _oracle_candidate(src, g)
        return pair.name, grid_dict(g), u.ravel(), z, EXIT_OK
    path = base_dir / src
    if path.is_dir() or path.name == "diagnostics.json":
        gd, u, z = load_run(path)
        return str(src), gd, u, z, EXIT_OK
    # a config file: run it in memory
    try:
        sub = load_config(path)
    except ConfigError as exc:
        raise ConfigError(f"{key}:{exc.field}", exc.message) from exc
    mode = sub.get("mode", "continue")
    if mode not in ("solve", "continue"):
        raise ConfigError(key, f"referenced config has mode {mode!r}")
    out = run_solve(sub) if mode == "solve" else run_continue(sub)
    return str(src), grid_dict(out.grid), out.u.ravel(), out.z, out.code


def compare_fields(gd: dict, u_a, z_a, u_b, z_b) -> dict:
    vol = float(np.prod(gd["h"]))
    du = np.abs(np.asarray(u_a) - np.asarray(u_b))
    return {"l1": vol * float(du.sum()), "l2": float(np.sqrt(vol * np.sum(du ** 2))),
            "linf": float(du.max()), "z_max_face": float(np.max(np.abs(np.asarray(z_a) - z_b)))}


def run_compare(cfg: dict, base_dir: Path) -> RunOutput:
    comp = _require(cfg, "compare")
    la, ga, ua, za, ca = _resolve_source(comp["run_a"], "compare.run_a", cfg, base_dir)
    lb, gb, ub, zb, cb = _resolve_source(comp["run_b"], "compare.run_b", cfg, base_dir)
    if ga["extents"] != gb["extents"] or ga["n"] != gb["n"]:
        raise ConfigError("compare.run_b", "runs live on different grids")
    tol = float(comp.get("tolerance", 1e-2))
    doc = {"run_a": la, "run_b": lb, **compare_fields(ga, ua, za, ub, zb), "tolerance": tol,
           "grid": ga}
    doc["verdict"] = "coincide" if doc["linf"] <= tol else "differ"
    g = build_grid(ga["extents"], ga["n"])
    code = EXIT_NONCONV if EXIT_NONCONV in (ca, cb) else EXIT_OK
    return RunOutput(code, g, ua.reshape(g.shape), za, comparison=doc)


def execute(cfg: dict, mode: str, base_dir: Path = Path(".")) -> RunOutput:
    if mode not in MODES:
        raise ConfigError("mode", f"unknown mode {mode!r}")
    if cfg.get("mode", mode) != mode:
        raise ConfigError("mode", f"config is for {cfg['mode']!r}, command line asks for {mode!r}")
    if mode == "solve":
        return run_solve(cfg)
    if mode == "continue":
        return run_continue(cfg)
    if mode == "certify":
        return run_certify(cfg, base_dir)
    return run_compare(cfg, base_dir)


def write_artifacts(out: RunOutput, cfg: dict, out_dir: Path) -> list[Path]:
    formats = cfg.get("outputs", {}).get("formats", ["csv", "json"])
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if "csv" in formats and out.comparison is None:
        p = out_dir / "fields.csv"
        write_fields_csv(p, out.u, out.z, out.grid)
        written.append(p)
    if "json" in formats:
        for name, doc in (("diagnostics", out.diagnostics), ("report", out.report),
                          ("comparison", out.comparison)):
            if doc is not None:
                p = out_dir / f"{name}.json"
                write_json(p, doc, name)
                written.append(p)
    return written


def _error(kind: str, message: str, field: str | None = None) -> None:
    doc = {"error": kind, "message": message}
    if field is not None:
        doc["field"] = field
    print(json.dumps(doc, sort_keys=True), file=sys.stderr)


def run(config_path, mode: str | None = None, out: str | None = None) -> int:
    """Execute one config; return the process exit code."""
    config_path = Path(config_path)
    try:
        cfg = load_config(config_path)
        mode = mode or cfg.get("mode")
        if mode is None:
            raise ConfigError("mode", "no mode given on the command line or in the config")
        result = execute(cfg, mode, config_path.parent)
        out_dir = Path(out) if out else Path(cfg.get("outputs", {}).get("directory", "onelap_out"))
        write_artifacts(result, cfg, out_dir)
    except ConfigError as exc:
        _error("config", exc.message, exc.field)
        return EXIT_CONFIG
    except RunFailure as exc:
        _error(exc.kind, exc.message)
        return exc.code
    if result.code == EXIT_NONCONV:
        _error("nonconvergence", "at least one p-problem did not converge")
    return result.code


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="onelap", description=__doc__.splitlines()[0])
    ap.add_argument("mode", choices=MODES)
    ap.add_argument("--config", required=True, help="experiment config (JSON)")
    ap.add_argument("--out", help="output directory (overrides outputs.directory)")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return run(args.config, args.mode, args.out)


if __name__ == "__main__":
    sys.exit(main())
