"""Continuation p -> 1 with uniform-estimate diagnostics."""
from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq

from .grid import Grid, clip_flux, flux_inf_norm, total_variation
from .psolver import (NonConvergenceWarning, ProblemSpec, PSolution, PSolveConfig,
                      extract_flux, solve_p_problem)

log = logging.getLogger(__name__)

DEFAULT_P_VALUES = (1.5, 1.2, 1.1, 1.05, 1.02, 1.01)


class AllSolvesFailed(RuntimeError):
    pass


class InsufficientRecords(ValueError):
    pass


def auto_eps(p: float) -> float:
    return min(1e-6, (p - 1.0) ** 2)


@dataclass(frozen=True)
class Schedule:
    p_values: tuple[float, ...] = DEFAULT_P_VALUES
    eps_values: tuple[float, ...] | None = None  # None: auto_eps per p
    warm_start: bool = True

    def __post_init__(self):
        p = tuple(float(v) for v in self.p_values)
        if not p or any(v <= 1 for v in p) or any(b >= a for a, b in zip(p, p[1:])):
            raise ValueError("p_values must be strictly decreasing and > 1")
        eps = tuple(auto_eps(v) for v in p) if self.eps_values is None \
            else tuple(float(v) for v in self.eps_values)
        if len(eps) != len(p) or any(e <= 0 for e in eps) \
                or any(b > a for a, b in zip(eps, eps[1:])):
            raise ValueError("eps_values must be positive, nonincreasing, one per p")
        object.__setattr__(self, "p_values", p)
        object.__setattr__(self, "eps_values", eps)


@dataclass
class PRecord:
    p: float
    eps: float
    solution: PSolution
    tv: float
    u_max: float
    z_max: float
    excess_norm: float | None
    seconds: float

    @property
    def converged(self) -> bool:
        return self.solution.converged


@dataclass
class ContinuationResult:
    spec: ProblemSpec
    records: list[PRecord]
    u_star: np.ndarray
    z_star: np.ndarray
    clip: float
    k: float | None = None
    estimator: str = "last"
    notes: dict = field(default_factory=dict)

    @property
    def grid(self) -> Grid:
        return self.spec.grid

    def converged_records(self) -> list[PRecord]:
        return [r for r in self.records if r.converged]


def excess(u: np.ndarray, k: float) -> np.ndarray:
    """G_k(u) = (u - k)^+ for nonnegative u."""
    return np.maximum(np.asarray(u) - k, 0.0)


def _lq_norm(v: np.ndarray, g: Grid, q: float) -> float:
    v = np.abs(np.asarray(v))
    if np.isinf(q):
        return float(v.max())
    return float((g.cell_volume * np.sum(v ** q)) ** (1.0 / q))


def run_schedule(spec: ProblemSpec, sched: Schedule, cfg_template: PSolveConfig | None = None,
                 k: float | None = None, estimator: str = "last") -> ContinuationResult:
    cfg_template = cfg_template or PSolveConfig()
    g = spec.grid
    records = []
    prev = None
    for p, eps in zip(sched.p_values, sched.eps_values):
        init = prev.u if (sched.warm_start and prev is not None) else cfg_template.init
        cfg = replace(cfg_template, p=p, eps=eps, init=init)
        t0 = time.perf_counter()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", NonConvergenceWarning)
            sol = solve_p_problem(spec, cfg)
        dt = time.perf_counter() - t0
        rec = PRecord(p=p, eps=eps, solution=sol, tv=total_variation(sol.u, g),
                      u_max=float(np.max(sol.u)), z_max=flux_inf_norm(sol.z, g),
                      excess_norm=None if k is None else _lq_norm(excess(sol.u, k), g, 1.0),
                      seconds=dt)
        records.append(rec)
        if sol.converged:
            prev = sol
        else:
            log.warning("p=%g did not converge (residual %.3e)", p, sol.residual)
        log.info("p=%g iters=%d tv=%.4f max u=%.4f max|z|=%.4f",
                 p, sol.iterations, rec.tv, rec.u_max, rec.z_max)
    good = [r for r in records if r.converged]
    if not good:
        raise AllSolvesFailed("no p-problem in the schedule converged")
    result = ContinuationResult(spec=spec, records=records, u_star=good[-1].solution.u,
                                z_star=good[-1].solution.z, clip=0.0, k=k)
    if len(good) >= 2:
        u_star, z_star, clip = limit_estimate(result, estimator)
    else:
        z_star, clip = clip_flux(good[-1].solution.z, g)
        u_star = good[-1].solution.u
    result.u_star, result.z_star, result.clip, result.estimator = u_star, z_star, clip, estimator
    return result


def limit_estimate(result: ContinuationResult, mode: str = "last"):
    """Limit candidate (u*, z*, clip) from the converged records.

    ``"last"`` takes the smallest-p fields; ``"richardson"`` extrapolates u
    linearly in p - 1 to p = 1 from the last two records (clipped at 0).
    z* is the smallest-p flux normalized face-wise to |z| <= 1; ``clip`` is
    the largest magnitude removed.
    """
    good = result.converged_records()
    if len(good) < 2:
        raise InsufficientRecords("need at least two converged records")
    a, b = good[-2], good[-1]
    if mode == "last":
        u = b.solution.u.copy()
    elif mode == "richardson":
        ta, tb = a.p - 1.0, b.p - 1.0
        u = b.solution.u + (b.solution.u - a.solution.u) * (tb / (ta - tb))
        u = np.maximum(u, 0.0)
    else:
        raise ValueError(f"unknown limit estimator {mode!r}")
    z, clip = clip_flux(b.solution.z, result.grid)
    return u, z, clip


def linf_decay_check(result: ContinuationResult, k: float) -> list[tuple[float, float, float, float]]:
    """Per p: (p, ||G_k(u_p)||_{N/(N-1)}, ||G_k(u_p)||_1, ||G_k(u_p)||_1 / (p - 1)).

    The critical exponent N/(N-1) is infinite in 1D.
    """
    if not k > 0:
        raise ValueError("k must be positive")
    g = result.grid
    q = np.inf if g.dim == 1 else g.dim / (g.dim - 1)
    out = []
    for r in result.converged_records():
        e = excess(r.solution.u, k)
        l1 = _lq_norm(e, g, 1.0)
        out.append((r.p, _lq_norm(e, g, q), l1, l1 / (r.p - 1.0)))
    return out


def sobolev_constant(g: Grid) -> float:
    """Constant S with ||v||_{N/(N-1)} <= S * TV(v) for v vanishing outside the box.

    1D: ||v||_inf <= TV/2 (the profile must rise and fall back to zero).
    2D: the isoperimetric constant 1/(2 sqrt(pi)), raised if the discrete
    ratio on centered squares and discs of the grid exceeds it.
    """
    if g.dim == 1:
        return 0.5
    s = 1.0 / (2.0 * np.sqrt(np.pi))
    x, y = g.node_coords()
    cx, cy = [0.5 * (a + b) for a, b in g.extents]
    half = 0.5 * min(b - a for a, b in g.extents)
    for r in np.linspace(0.2, 0.9, 8) * half:
        for v in ((np.hypot(x - cx, y - cy) < r), (np.maximum(abs(x - cx), abs(y - cy)) < r)):
            v = v.astype(float)
            tv = total_variation(v, g)
            if tv > 0:
                s = max(s, _lq_norm(v, g, 2.0) / tv)
    return float(s)


def bv_bound(spec: ProblemSpec) -> float:
    """Explicit p-independent bound M + |Omega| on the total variation of u_p.

    With q = N/(N-1), A = S ||f||_N |Omega|^(gamma/q) and B = S |Omega|, the
    norm X = ||u_p||_q obeys X <= A X^(1-gamma) + B, so X <= X* (the positive
    root); then sum |grad u_p|^p <= M = (A/S) X*^(1-gamma).
    """
    g = spec.grid
    S = sobolev_constant(g)
    vol = g.volume
    N = g.dim
    fN = _lq_norm(spec.f, g, float(N))
    q = np.inf if N == 1 else N / (N - 1)
    vol_pow = 1.0 if N == 1 else vol ** (spec.gamma / q)
    A, B = S * fN * vol_pow, S * vol
    gamma = spec.gamma
    if A == 0:
        X = B
    elif gamma == 1:
        X = A + B
    else:
        fun = lambda X: X - A * X ** (1 - gamma) - B  # noqa: E731
        hi = max(1.0, B, A) * 2
        while fun(hi) <= 0:
            hi *= 2
        X = brentq(fun, B, hi)
    M = (A / S) * X ** (1 - gamma)
    return float(M + vol)


def admissible_k(spec: ProblemSpec) -> float:
    """Levels k above this value satisfy S ||f||_N / k^gamma < 1."""
    g = spec.grid
    return float((sobolev_constant(g) * _lq_norm(spec.f, g, float(g.dim))) ** (1.0 / spec.gamma))


def bv_uniform_check(result: ContinuationResult) -> tuple[list[tuple[float, float]], float]:
    """Per-p boundary-inclusive TV(u_p) and the explicit bound it must stay below."""
    return [(r.p, r.tv) for r in result.converged_records()], bv_bound(result.spec)


__all__ = [
    "AllSolvesFailed", "ContinuationResult", "InsufficientRecords", "PRecord", "Schedule",
    "admissible_k", "auto_eps", "bv_bound", "bv_uniform_check", "excess", "extract_flux",
    "limit_estimate", "linf_decay_check", "run_schedule", "sobolev_constant",
]
