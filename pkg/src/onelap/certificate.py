"""Defect computations deciding whether a discrete pair (u, z) is a solution.

Every defect is a nonnegative number that vanishes for an exact solution;
``certify`` compares them against tolerances and renders verdicts.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .grid import Grid, boundary_area, divergence, flux_inf_norm, gradient, pairing, total_variation
from .psolver import ProblemSpec

ROUND_OFF = 1e-12


class InvalidCandidate(ValueError):
    pass


# -- test family -----------------------------------------------------------

def truncation(s, k: float):
    """T_k(s) = min(|s|, k) sign(s)."""
    s = np.asarray(s, dtype=float)
    return np.sign(s) * np.minimum(np.abs(s), k)


def excess(s, k: float):
    """G_k(s) = s - T_k(s)."""
    return np.asarray(s, dtype=float) - truncation(s, k)


def bump(coords, center, radius) -> np.ndarray:
    """Product of (1 - r^2)^2 bumps; compactly supported, max 1."""
    out = 1.0
    for x, c in zip(coords, center):
        t = (np.asarray(x) - c) / radius
        out = out * np.where(np.abs(t) < 1, (1 - t * t) ** 2, 0.0)
    return np.asarray(out, dtype=float)


@dataclass(frozen=True)
class TestFamily:
    levels: tuple[float, ...] = (0.05, 0.2, 1.0)
    steepness: tuple[float, ...] = (2.0, 10.0)
    radii: tuple[float, ...] = (0.1, 0.25, 0.45)  # fractions of the half-width
    margin: float = 0.05  # fraction of the half-width kept clear of the boundary
    seed: int | None = None  # None: deterministic lattice of centres
    n_random: int = 16

    __test__ = False  # not a pytest class

    def __post_init__(self):
        if any(k <= 0 for k in self.levels) or any(n <= 0 for n in self.steepness):
            raise ValueError("levels and steepness must be positive")
        if any(not 0 < r < 1 for r in self.radii) or not 0 < self.margin < 1:
            raise ValueError("radii and margin are fractions in (0, 1)")

    def h_functions(self):
        out = [(f"T_{k:g}", lambda s, k=k: np.minimum(s, k)) for k in self.levels]
        out += [(f"{n:g}T_1/{n:g}", lambda s, n=n: np.minimum(n * s, 1.0)) for n in self.steepness]
        return out

    def test_functions(self, g: Grid) -> list[np.ndarray]:
        half = 0.5 * min(b - a for a, b in g.extents)
        lo = [a + self.margin * half for a, _ in g.extents]
        hi = [b - self.margin * half for _, b in g.extents]
        coords = g.node_coords()
        rng = None if self.seed is None else np.random.default_rng(self.seed)
        phis = []
        for frac in self.radii:
            r = frac * half
            axes = []
            for a, b in zip(lo, hi):
                if b - a < 2 * r:
                    axes = None
                    break
                if rng is None:
                    step = r / 2 if g.dim == 1 else r
                    m = int(np.floor((b - a - 2 * r) / step)) + 1
                    axes.append(a + r + step * np.arange(m))
                else:
                    axes.append(rng.uniform(a + r, b - r, self.n_random))
            if axes is None:
                continue
            centres = list(zip(*axes)) if rng is not None else \
                [tuple(c) for c in np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, g.dim)]
            for c in centres:
                phi = bump(coords, c, r)
                if phi.max() > 0:
                    phis.append(phi)
        return phis


# -- thresholds and report -------------------------------------------------

@dataclass(frozen=True)
class Thresholds:
    theta: float
    theta_f: float
    tolerance: float
    overrides: dict = field(default_factory=dict)
    margin: float = 0.05  # interior region for condition (a), fraction of the half-width

    @classmethod
    def default(cls, g: Grid, eps_last: float = 0.0, tolerance: float | None = None):
        h = max(g.h)
        theta = max(10 * eps_last, h)
        return cls(theta=theta, theta_f=theta, tolerance=10 * h if tolerance is None else tolerance)

    def tol(self, name: str) -> float:
        return float(self.overrides.get(name, self.tolerance))

    def scaled(self, factor: float) -> "Thresholds":
        return Thresholds(self.theta, self.theta_f, self.tolerance * factor,
                          {k: v * factor for k, v in self.overrides.items()}, self.margin)


@dataclass
class CertificateReport:
    defect_a: float
    singular_l1: float
    perimeter: float
    interface_count: int
    defect_c: float
    defect_d_u: float
    defect_d_chi: float
    defect_e: float
    defect_support: float
    defect_var: float
    interface_flux_mass: float
    defect_b_global: float | None
    defect_sign: float | None
    thresholds: dict
    verdicts: dict
    passed: bool

    def to_dict(self) -> dict:
        """JSON-ready dict; non-finite defects become None."""
        return {k: _finite_or_none(v) for k, v in asdict(self).items()}


def _finite_or_none(v):
    if isinstance(v, dict):
        return {k: _finite_or_none(x) for k, x in v.items()}
    if isinstance(v, float) and not np.isfinite(v):
        return None
    return v


# -- helpers ---------------------------------------------------------------

_NEIGHBOUR_CACHE: dict = {}


def _neighbours(g: Grid):
    key = (g.extents, g.n)
    if key not in _NEIGHBOUR_CACHE:
        G = g.G.tocoo()
        interior = ~g.boundary_faces
        rows = G.row[interior[G.row]]
        cols = G.col[interior[G.row]]
        vals = G.data[interior[G.row]]
        order = np.argsort(rows, kind="stable")
        rows, cols, vals = rows[order], cols[order], vals[order]
        faces = rows[vals > 0]
        hi = cols[vals > 0]
        lo = cols[vals < 0]
        _NEIGHBOUR_CACHE[key] = (faces, lo, hi)
    return _NEIGHBOUR_CACHE[key]


def _interfaces(u, theta, g: Grid):
    faces, lo, hi = _neighbours(g)
    pos = np.asarray(u).ravel() > theta
    jump = pos[lo] != pos[hi]
    nu = np.where(pos[hi[jump]], 1.0, -1.0)  # from the zero side to the positive side
    return faces[jump], lo[jump], hi[jump], nu


def singular_source(u, f, gamma):
    """f / u^gamma with the value 0 wherever f = 0; inf where f > 0 = u."""
    u = np.asarray(u, dtype=float)
    f = np.asarray(f, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(f > 0, f / np.maximum(u, 0.0) ** gamma, 0.0)
    return out


def _interior_nodes(g: Grid) -> np.ndarray:
    return ~g.boundary_nodes


# -- defects ---------------------------------------------------------------

def pairing_defect(u, z, g: Grid) -> float:
    """TV(u) - <z, grad u> over interior faces."""
    zn = flux_inf_norm(z, g)
    if zn > 1 + ROUND_OFF:
        raise InvalidCandidate(f"|z| reaches {zn:.6g} > 1")
    tv = total_variation(u, g, interior_only=True)
    d = tv - pairing(z, u, g, interior_only=True)
    if d < -ROUND_OFF * max(tv, 1.0):
        raise AssertionError(f"pairing exceeds total variation by {-d:.3e}")
    return max(d, 0.0)


def interface_defect(u, z, theta: float, g: Grid) -> tuple[float, int, float]:
    """(max |1 - z.nu_jump| over interface faces, interface count, sum |z.nu| area)."""
    faces, _, _, nu = _interfaces(u, theta, g)
    if faces.size == 0:
        return 0.0, 0, 0.0
    zn = np.asarray(z)[faces] * nu
    area = boundary_area(g)[faces]
    return float(np.max(np.abs(1.0 - zn))), int(faces.size), float(np.sum(np.abs(zn) * area))


def active_nodes(u, theta: float, g: Grid) -> np.ndarray:
    """Interior nodes with u > theta that do not touch an interface face."""
    u = np.asarray(u)
    active = (u.ravel() > theta) & _interior_nodes(g).ravel()
    _, lo, hi, _ = _interfaces(u, theta, g)
    active[lo] = False
    active[hi] = False
    return active.reshape(g.shape)


def pde_residual(u, z, spec: ProblemSpec, theta: float, fam: TestFamily | None = None,
                 phis: list[np.ndarray] | None = None) -> float:
    """max over bumps phi of |<-div z - f/u^gamma, phi>_active| / ||phi||_inf."""
    g = spec.grid
    act = active_nodes(u, theta, g)
    if not act.any():
        return 0.0
    r = -divergence(z, g) - singular_source(u, spec.f, spec.gamma)
    r = np.where(act, r, 0.0)
    phis = (fam or TestFamily()).test_functions(g) if phis is None else phis
    best = 0.0
    for phi in phis:
        best = max(best, abs(g.cell_volume * float(np.sum(r * phi))) / float(np.max(np.abs(phi))))
    return best


def boundary_defect(u, z, g: Grid) -> float:
    """sum over boundary faces of |u_near| |1 + z.nu| h^(d-1)."""
    b = g.boundary_faces
    u_near = np.asarray(u).ravel()[g.boundary_face_node[b]]
    zn = np.asarray(z)[b] * g.outward_normal[b]
    return float(np.sum(np.abs(u_near) * np.abs(1.0 + zn) * boundary_area(g)[b]))


def sign_defect(u, z, theta: float, g: Grid) -> float:
    """max distance of [z, nu] from sign(-u) on the boundary (sign(0) = [-1, 1])."""
    b = g.boundary_faces
    u_near = np.asarray(u).ravel()[g.boundary_face_node[b]]
    zn = np.asarray(z)[b] * g.outward_normal[b]
    d = np.where(u_near > theta, np.abs(zn + 1.0), np.maximum(np.abs(zn) - 1.0, 0.0))
    return float(d.max()) if d.size else 0.0


def support_defect(u, f, theta: float, theta_f: float, g: Grid) -> float:
    """h^d #{interior nodes with u <= theta and f >= theta_f}."""
    if not (theta > 0 and theta_f > 0):
        raise ValueError("theta and theta_f must be positive")
    bad = (np.asarray(u) <= theta) & (np.asarray(f) >= theta_f) & _interior_nodes(g)
    return g.cell_volume * int(bad.sum())


def variational_defect(u, z, spec: ProblemSpec, fam: TestFamily | None = None,
                       phis: list[np.ndarray] | None = None) -> float:
    """max over (h, phi) of the normalized residual of

        sum phi |D h(u)| + sum h(u) z . grad phi - sum f/u^gamma h(u) phi.
    """
    g = spec.grid
    fam = fam or TestFamily()
    phis = fam.test_functions(g) if phis is None else phis
    u = np.maximum(np.asarray(u, dtype=float), 0.0)
    z = np.asarray(z, dtype=float)
    vol = g.cell_volume
    with np.errstate(divide="ignore", invalid="ignore"):
        src_base = np.where((u > 0) & (spec.f > 0), spec.f / u ** spec.gamma, 0.0)
    best = 0.0
    for _, hfun in fam.h_functions():
        hu = hfun(u)
        mag = g.cell_magnitude(gradient(hu, g))
        hu_face = g.face_nodes @ hu.ravel()
        src = src_base * hu
        norm_h = vol * float(np.sum(np.abs(hu)))
        for phi in phis:
            t1 = vol * float(np.dot(g.cell_nodes @ phi.ravel(), mag))
            t2 = vol * float(np.dot(hu_face * z, gradient(phi, g)))
            t3 = vol * float(np.sum(src * phi))
            best = max(best, abs(t1 + t2 - t3) / (float(np.max(np.abs(phi))) * (1.0 + norm_h)))
    return best


def _interior_region(g: Grid, margin_frac: float) -> np.ndarray:
    half = 0.5 * min(b - a for a, b in g.extents)
    return g.distance_to_boundary() >= margin_frac * half


# -- driver ----------------------------------------------------------------

def certify(u, z, spec: ProblemSpec, thresholds: Thresholds | None = None,
            fam: TestFamily | None = None) -> CertificateReport:
    g = spec.grid
    u = np.asarray(u, dtype=float)
    z = np.asarray(z, dtype=float)
    if u.shape != g.shape or z.shape != (g.face_count,):
        raise ValueError("candidate fields do not match the grid")
    th = thresholds or Thresholds.default(g)
    fam = fam or TestFamily()
    phis = fam.test_functions(g)

    omega = _interior_region(g, th.margin)
    zero_set = u <= th.theta
    defect_a = g.cell_volume * float(np.sum(spec.f[omega & zero_set]))
    src = singular_source(u, spec.f, spec.gamma)
    singular_l1 = g.cell_volume * float(np.sum(src[omega & ~zero_set]))

    defect_d_u = pairing_defect(u, z, g)
    defect_d_chi, count, flux_mass = interface_defect(u, z, th.theta, g)
    iface = _interfaces(u, th.theta, g)[0]
    perimeter = float(np.sum(boundary_area(g)[iface]))
    defects = {
        "a": defect_a,
        "c": pde_residual(u, z, spec, th.theta, phis=phis),
        "d_u": defect_d_u,
        "d_chi": defect_d_chi,
        "e": boundary_defect(u, z, g),
        "support": support_defect(u, spec.f, th.theta, th.theta_f, g),
        "var": variational_defect(u, z, spec, fam, phis=phis),
    }
    b_global = sign = None
    if float(np.min(spec.f[_interior_nodes(g)])) > 0:
        inner = _interior_nodes(g)
        total = g.cell_volume * float(np.sum(src[inner]))
        b_global = max(0.0, total - g.perimeter)
        sign = sign_defect(u, z, th.theta, g)
        defects["b_global"] = b_global
        defects["sign"] = sign

    verdicts = {k: bool(v <= th.tol(k)) for k, v in defects.items()}
    verdicts["b"] = bool(np.isfinite(perimeter))
    return CertificateReport(
        defect_a=defect_a, singular_l1=singular_l1, perimeter=perimeter,
        interface_count=count, defect_c=defects["c"], defect_d_u=defect_d_u,
        defect_d_chi=defect_d_chi, defect_e=defects["e"], defect_support=defects["support"],
        defect_var=defects["var"], interface_flux_mass=flux_mass,
        defect_b_global=b_global, defect_sign=sign,
        thresholds={"theta": th.theta, "theta_f": th.theta_f,
                    **{k: th.tol(k) for k in defects}},
        verdicts=verdicts, passed=all(verdicts.values()))


def condition_verdicts(report: CertificateReport) -> dict:
    """Verdicts grouped by condition letter: (d) needs both identities."""
    v = report.verdicts
    out = {"a": v["a"], "b": v["b"], "c": v["c"], "d": v["d_u"] and v["d_chi"], "e": v["e"],
           "support": v["support"], "var": v["var"]}
    if "b_global" in v:
        out["b_global"] = v["b_global"]
        out["sign"] = v["sign"]
    return out
