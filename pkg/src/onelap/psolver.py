"""Regularized singular p-Laplacian solver for fixed p > 1.

Solves, on the interior nodes of a grid with u = 0 on the boundary nodes,

    -div(|grad u|_delta^(p-2) grad u) = f / (u + eps)^gamma,

which is the Euler-Lagrange system of the strictly convex energy

    (1/p) sum_c h^d ((|grad u|_c^2 + delta^2)^(p/2) - delta^p) - sum_i h^d f_i Phi(u_i).

Newton steps are damped until the residual norm does not increase; after
five failed halvings a Kacanov (lagged-coefficient Picard) step is tried
instead.  Steps are cut back so iterates never leave u >= 0.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .grid import Grid, gradient

log = logging.getLogger(__name__)

# fraction of the distance to u = 0 a single step may cover
_TO_BOUNDARY = 0.9


class InvalidConfig(ValueError):
    pass


class NonConvergenceWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class ProblemSpec:
    grid: Grid
    f: np.ndarray
    gamma: float
    f_name: str | None = None

    def __post_init__(self):
        f = np.asarray(self.f, dtype=float)
        if f.shape != self.grid.shape:
            raise InvalidConfig(f"f has shape {f.shape}, grid has {self.grid.shape}")
        if not np.all(np.isfinite(f)) or f.min() < 0:
            raise InvalidConfig("f must be finite and nonnegative")
        if not 0 < self.gamma <= 1:
            raise InvalidConfig(f"gamma must lie in (0, 1], got {self.gamma}")
        object.__setattr__(self, "f", f)


@dataclass(frozen=True)
class PSolveConfig:
    p: float = 1.5
    eps: float = 1e-6
    delta: float | None = None  # None: grid spacing
    tol: float = 1e-7
    max_iter: int = 200
    damping: float = 0.5
    init: object = "auto"  # "auto", a constant, or a node field

    def __post_init__(self):
        if not self.p > 1:
            raise InvalidConfig(f"p must exceed 1, got {self.p}")
        if not self.eps > 0:
            raise InvalidConfig(f"eps must be positive, got {self.eps}")
        if self.delta is not None and self.delta < 0:
            raise InvalidConfig("delta must be nonnegative")
        if not self.tol > 0:
            raise InvalidConfig("tol must be positive")
        if not 0 < self.damping < 1:
            raise InvalidConfig("damping must lie in (0, 1)")
        if self.max_iter < 1:
            raise InvalidConfig("max_iter must be at least 1")

    def delta_for(self, g: Grid) -> float:
        return min(g.h) if self.delta is None else float(self.delta)


@dataclass
class PSolution:
    u: np.ndarray
    z: np.ndarray
    z_raw: np.ndarray
    residual_history: list[float] = field(default_factory=list)
    energy_history: list[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    picard_steps: int = 0

    @property
    def residual(self) -> float:
        return self.residual_history[-1]


def primitive(s, gamma: float, eps: float):
    """Primitive of s -> (s + eps)^-gamma vanishing at s = 0."""
    s = np.asarray(s, dtype=float)
    if gamma == 1:
        return np.log1p(s / eps)
    return ((s + eps) ** (1 - gamma) - eps ** (1 - gamma)) / (1 - gamma)


def _coefficients(gu: np.ndarray, g: Grid, p: float, delta: float):
    """Cell weights w = (|grad u|_c^2 + delta^2)^((p-2)/2) and the cell magnitudes squared."""
    s = g.C @ (gu * gu)
    base = s + delta * delta
    with np.errstate(divide="ignore"):
        w = np.where(base > 0, base ** ((p - 2) / 2), 0.0)
    return w, s, base


def extract_flux(u: np.ndarray, p: float, delta: float, g: Grid) -> np.ndarray:
    """Discrete |grad u|_delta^(p-2) grad u on faces."""
    if not p > 1:
        raise InvalidConfig("p must exceed 1")
    gu = gradient(u, g)
    w, _, _ = _coefficients(gu, g, p, delta)
    return (g.C.T @ w) * gu


def p_energy(u: np.ndarray, spec: ProblemSpec, cfg: PSolveConfig) -> float:
    g = spec.grid
    u = np.asarray(u, dtype=float)
    delta = cfg.delta_for(g)
    gu = gradient(u, g)
    s = g.C @ (gu * gu)
    grad_part = np.sum((s + delta ** 2) ** (cfg.p / 2) - delta ** cfg.p) / cfg.p
    return g.cell_volume * float(grad_part - np.sum(spec.f * primitive(u, spec.gamma, cfg.eps)))


def _initial(spec: ProblemSpec, cfg: PSolveConfig) -> np.ndarray:
    g = spec.grid
    if isinstance(cfg.init, str):
        if cfg.init != "auto":
            raise InvalidConfig(f"unknown init rule {cfg.init!r}")
        c = max(cfg.eps, (0.5 * g.cell_volume * spec.f.sum()) ** (1 / spec.gamma))
        u = np.full(g.shape, c)
    elif np.ndim(cfg.init) == 0:
        u = np.full(g.shape, float(cfg.init))
    else:
        u = np.array(cfg.init, dtype=float)
        if u.shape != g.shape:
            raise InvalidConfig("init field does not match the grid")
    u = np.maximum(u, 0.0)
    u[g.boundary_nodes] = 0.0
    return u


class _System:
    """Residual and Jacobian of the discrete problem on the free nodes."""

    def __init__(self, spec: ProblemSpec, cfg: PSolveConfig):
        self.spec, self.cfg = spec, cfg
        g = spec.grid
        self.g = g
        self.delta = cfg.delta_for(g)
        self.free = ~g.boundary_nodes.ravel()
        self.f = spec.f.ravel()
        self.G = g.G
        self.Gf = g.G[:, self.free].tocsc()
        self.weight = np.sqrt(g.cell_volume)

    def source(self, u):
        return self.f / (u + self.cfg.eps) ** self.spec.gamma

    def evaluate(self, u):
        gu = self.G @ u
        w, s, base = _coefficients(gu, self.g, self.cfg.p, self.delta)
        z = (self.g.C.T @ w) * gu
        rhs = self.source(u)
        r = (self.G.T @ z - rhs)[self.free]
        return r, gu, w, base, z, rhs

    def norm(self, v):
        return self.weight * float(np.linalg.norm(v))

    def newton_matrix(self, u, gu, w, base):
        g, p = self.g, self.cfg.p
        # d z_f / d g_f' = delta_ff' (C^T w)_f + g_f g_f' sum_c C_cf C_cf' 2 w'_c
        with np.errstate(divide="ignore", invalid="ignore"):
            dw = np.where(base > 0, (p - 2) * base ** ((p - 4) / 2), 0.0)
        H = sp.diags(g.C.T @ w) + sp.diags(gu) @ g.C.T @ sp.diags(dw) @ g.C @ sp.diags(gu)
        gamma, eps = self.spec.gamma, self.cfg.eps
        react = gamma * self.f[self.free] / (u[self.free] + eps) ** (gamma + 1)
        return (self.Gf.T @ H @ self.Gf + sp.diags(react)).tocsc()

    def picard_matrix(self, w):
        A = self.Gf.T @ sp.diags(self.g.C.T @ w) @ self.Gf
        return A.tocsc()


def _step_limit(u_free, d):
    neg = d < 0
    if not neg.any():
        return 1.0
    return min(1.0, _TO_BOUNDARY * float(np.min(u_free[neg] / -d[neg])))


def solve_p_problem(spec: ProblemSpec, cfg: PSolveConfig) -> PSolution:
    """Damped Newton solve of the regularized p-problem.

    Convergence means ||R|| <= tol * (1 + ||f/(u+eps)^gamma||) in the discrete
    L2 norm over interior nodes.  On failure the best iterate is returned with
    ``converged=False`` and a :class:`NonConvergenceWarning` is emitted.
    """
    g = spec.grid
    sysm = _System(spec, cfg)
    free = sysm.free
    u = _initial(spec, cfg).ravel()

    sol = PSolution(u=u, z=np.zeros(g.face_count), z_raw=np.zeros(g.face_count))
    if not np.any(spec.f > 0):
        # zero is the solution and a fixed point
        u = np.zeros(g.node_count)
        r, *_ = sysm.evaluate(u)
        sol.u = u.reshape(g.shape)
        sol.residual_history = [sysm.norm(r)]
        sol.energy_history = [0.0]
        sol.converged = True
        return sol

    r, gu, w, base, z, rhs = sysm.evaluate(u)
    res = sysm.norm(r)
    sol.residual_history.append(res)
    sol.energy_history.append(p_energy(u.reshape(g.shape), spec, cfg))

    def accept(d, max_halvings):
        nonlocal u, r, gu, w, base, z, rhs, res
        t = _step_limit(u[free], d)
        for _ in range(max_halvings + 1):
            trial = u.copy()
            trial[free] = np.maximum(u[free] + t * d, 0.0)
            out = sysm.evaluate(trial)
            new_res = sysm.norm(out[0])
            if np.isfinite(new_res) and new_res <= res:
                u = trial
                r, gu, w, base, z, rhs = out
                res = new_res
                return True
            t *= cfg.damping
        return False

    it = 0
    while it < cfg.max_iter:
        if res <= cfg.tol * (1.0 + sysm.norm(rhs[free])):
            sol.converged = True
            break
        it += 1
        J = sysm.newton_matrix(u, gu, w, base)
        d = spsolve(J, -r)
        ok = np.all(np.isfinite(d)) and accept(d, 5)
        if not ok:
            A = sysm.picard_matrix(w)
            target = spsolve(A, rhs[free])
            d = target - u[free]
            ok = np.all(np.isfinite(d)) and accept(d, 30)
            if ok:
                sol.picard_steps += 1
        if not ok:
            log.debug("line search stalled at iteration %d, residual %.3e", it, res)
            break
        sol.residual_history.append(res)
        sol.energy_history.append(p_energy(u.reshape(g.shape), spec, cfg))
    else:
        sol.converged = res <= cfg.tol * (1.0 + sysm.norm(rhs[free]))

    sol.u = u.reshape(g.shape)
    sol.z = z
    sol.z_raw = extract_flux(sol.u, cfg.p, 0.0, g)
    sol.iterations = it
    if not sol.converged:
        warnings.warn(f"p={cfg.p}: no convergence after {it} iterations "
                      f"(residual {res:.3e})", NonConvergenceWarning, stacklevel=2)
    return sol


def interior_positivity(u: np.ndarray, g: Grid, margin_cells: int = 1) -> float:
    """min of u over nodes at least margin_cells * h away from the boundary."""
    if margin_cells < 1:
        raise ValueError("margin_cells must be >= 1")
    d = g.distance_to_boundary()
    mask = d >= margin_cells * max(g.h) - 1e-12 * max(g.h)
    if not mask.any():
        raise ValueError(f"margin of {margin_cells} cells leaves no nodes")
    return float(np.min(np.asarray(u)[mask]))


def bv_estimate_check(sol: PSolution, spec: ProblemSpec, cfg: PSolveConfig) -> tuple[float, float]:
    """Energy identity from testing the equation with u_p itself.

    Returns (sum h^d |grad u|_delta^(p-2) |grad u|^2, sum h^d f u^(1-gamma)).
    The first equals <f/(u+eps)^gamma, u> up to the residual, hence lhs <= rhs
    up to the solver tolerance; it tends to sum |grad u|^p as delta -> 0.
    """
    g = spec.grid
    gu = gradient(sol.u, g)
    w, s, _ = _coefficients(gu, g, cfg.p, cfg.delta_for(g))
    lhs = g.cell_volume * float(np.sum(w * s))
    rhs = g.cell_volume * float(np.sum(spec.f * np.asarray(sol.u) ** (1 - spec.gamma)))
    return lhs, rhs


def with_p(cfg: PSolveConfig, **changes) -> PSolveConfig:
    return replace(cfg, **changes)
