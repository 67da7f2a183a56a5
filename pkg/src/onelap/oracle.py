"""Closed-form 1D solutions on (-1, 1) and the constant-solution construction."""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from numpy.polynomial import Polynomial as P

from .grid import Grid

_SNAP = 1e-12


@dataclass(frozen=True)
class Piecewise:
    """Piecewise polynomial on [breaks[0], breaks[-1]].

    A point exactly on an interior breakpoint takes the right-limit value;
    the right endpoint takes the last piece.
    """
    breaks: tuple[float, ...]
    pieces: tuple[P, ...]

    def __post_init__(self):
        if len(self.breaks) != len(self.pieces) + 1 or list(self.breaks) != sorted(self.breaks):
            raise ValueError("need sorted breaks and one polynomial per interval")

    @classmethod
    def from_coeffs(cls, breaks, coeffs):
        return cls(tuple(float(b) for b in breaks), tuple(P(c) for c in coeffs))

    @classmethod
    def constant(cls, c, a=-1.0, b=1.0):
        return cls((float(a), float(b)), (P([c]),))

    def _piece_index(self, x):
        br = np.asarray(self.breaks)
        x = np.asarray(x, dtype=float)
        # snap round-off neighbours of breakpoints onto them
        j = np.clip(np.searchsorted(br, x), 0, br.size - 1)
        near = np.abs(br[j] - x) <= _SNAP * (1 + np.abs(x))
        jm = np.clip(j - 1, 0, br.size - 1)
        near_m = np.abs(br[jm] - x) <= _SNAP * (1 + np.abs(x))
        xs = np.where(near, br[j], np.where(near_m, br[jm], x))
        idx = np.searchsorted(br, xs, side="right") - 1
        return np.clip(idx, 0, len(self.pieces) - 1), xs

    def __call__(self, x):
        idx, xs = self._piece_index(x)
        out = np.empty(np.shape(xs))
        for i, poly in enumerate(self.pieces):
            m = idx == i
            if np.any(m):
                out[m] = poly(xs[m])
        return out if out.ndim else float(out)

    def derivative(self) -> "Piecewise":
        return Piecewise(self.breaks, tuple(q.deriv() for q in self.pieces))

    def integral(self) -> float:
        return float(sum(q.integ()(b) - q.integ()(a)
                         for q, a, b in zip(self.pieces, self.breaks[:-1], self.breaks[1:])))

    def antiderivative(self) -> "Piecewise":
        """Continuous primitive vanishing at the left end."""
        out, acc = [], 0.0
        for q, a, b in zip(self.pieces, self.breaks[:-1], self.breaks[1:]):
            Q = q.integ()
            Q = Q - Q(a) + acc
            out.append(Q)
            acc = float(Q(b))
        return Piecewise(self.breaks, tuple(out))

    def scale_add(self, scale: float, shift: float) -> "Piecewise":
        return Piecewise(self.breaks, tuple(scale * q + shift for q in self.pieces))

    def extrema(self) -> tuple[float, float]:
        """Min and max over the closed interval, one-sided limits included."""
        vals = []
        for q, a, b in zip(self.pieces, self.breaks[:-1], self.breaks[1:]):
            pts = [a, b]
            if q.degree() >= 2:
                crit = q.deriv().roots()
                pts += [float(r.real) for r in np.atleast_1d(crit)
                        if abs(r.imag) < 1e-12 and a < r.real < b]
            vals += [float(q(t)) for t in pts]
        return min(vals), max(vals)

    def sample(self, x):
        return self(x)


@dataclass(frozen=True)
class ClosedFormPair:
    name: str
    u: Piecewise
    z: Piecewise
    f: Piecewise
    gamma: float = 1.0
    domain: tuple[float, float] = (-1.0, 1.0)

    @property
    def breakpoints(self) -> tuple[float, ...]:
        inner = set(self.u.breaks[1:-1]) | set(self.z.breaks[1:-1]) | set(self.f.breaks[1:-1])
        return tuple(sorted(inner))


_H = 0.5
_Q = 0.25


def _example1_f() -> Piecewise:
    return Piecewise.from_coeffs([-1, -_H, _H, 1], [[0], [1], [0]])


def _example1_z1() -> Piecewise:
    return Piecewise.from_coeffs([-1, -_H, _H, 1], [[1], [0, -2], [-1]])


def _example1_z2() -> Piecewise:
    return Piecewise.from_coeffs([-1, -_H, _H, 1], [[2, 2], [0, -2], [-2, 2]])


def example1_pairs() -> list[ClosedFormPair]:
    """f = indicator of (-1/2, 1/2), gamma = 1: (u1, z1), (u2, z1), (u2, z2)."""
    f = _example1_f()
    u1 = Piecewise.constant(0.5)
    u2 = Piecewise.from_coeffs([-1, -_H, _H, 1], [[0], [0.5], [0]])
    z1, z2 = _example1_z1(), _example1_z2()
    return [ClosedFormPair("example1/u1z1", u1, z1, f),
            ClosedFormPair("example1/u2z1", u2, z1, f),
            ClosedFormPair("example1/u2z2", u2, z2, f)]


def _example2_f() -> Piecewise:
    # tent: -x - 1/2 on (-1, -1/2], 0 on (-1/2, 1/2), x - 1/2 on [1/2, 1)
    return Piecewise.from_coeffs([-1, -_H, _H, 1], [[-0.5, -1], [0], [-0.5, 1]])


def example2_pairs() -> list[ClosedFormPair]:
    """Tent datum, gamma = 1: (1/8, z1), (chi_{f>0}/16, z2), (u3, z3)."""
    f = _example2_f()
    br = [-1, -_H, _H, 1]
    u1 = Piecewise.constant(1 / 8)
    z1 = Piecewise.from_coeffs(br, [[1, 4, 4], [0], [-1, 4, -4]])
    u2 = Piecewise.from_coeffs(br, [[1 / 16], [0], [1 / 16]])
    z2 = Piecewise.from_coeffs(br, [[1, 8, 8], [0, 2], [-1, 8, -8]])
    br3 = [-1, -_H, -_Q, _Q, _H, 1]
    u3 = Piecewise.from_coeffs(br3, [[1 / 16], [1 / 16], [0], [1 / 16], [1 / 16]])
    z3 = Piecewise.from_coeffs(br3, [[1, 8, 8], [-1], [0, 4], [1], [-1, 8, -8]])
    return [ClosedFormPair("example2/u1z1", u1, z1, f),
            ClosedFormPair("example2/u2z2", u2, z2, f),
            ClosedFormPair("example2/u3z3", u3, z3, f)]


# named data on (-1, 1); 2D presets are products/sums over the axes
PRESETS_1D = {
    "zero": lambda: Piecewise.constant(0.0),
    "one": lambda: Piecewise.constant(1.0),
    "chi_half": _example1_f,
    "tent": _example2_f,
    "one_plus_x2": lambda: Piecewise.from_coeffs([-1, 1], [[1, 0, 1]]),
}


def preset_f(name: str, g: Grid) -> np.ndarray:
    """Sample a named datum at the nodes of ``g``."""
    if name not in PRESETS_1D:
        raise KeyError(f"unknown datum {name!r}; known: {sorted(PRESETS_1D)}")
    coords = g.node_coords()
    if g.dim == 1:
        return np.asarray(PRESETS_1D[name]()(coords[0]), dtype=float)
    if name in ("zero", "one"):
        return np.full(g.shape, 0.0 if name == "zero" else 1.0)
    if name == "chi_half":
        return np.prod([_example1_f()(x) for x in coords], axis=0)
    if name == "one_plus_x2":
        return 1.0 + sum(x * x for x in coords)
    raise KeyError(f"datum {name!r} has no 2D version")


def constant_solution(f: Piecewise, gamma: float = 1.0) -> ClosedFormPair | None:
    """u = c = (1/2 int f)^(1/gamma) with z = 1 - c^-gamma int_{-1}^x f.

    Returns None when int f = 0 or |z| <= 1 fails.
    """
    if tuple(f.breaks[::len(f.breaks) - 1]) != (-1.0, 1.0):
        raise ValueError("constant_solution is defined on (-1, 1)")
    mass = f.integral()
    if mass <= 0:
        return None
    c = (0.5 * mass) ** (1.0 / gamma)
    z = f.antiderivative().scale_add(-1.0 / c ** gamma, 1.0)
    lo, hi = z.extrema()
    if lo < -1 - 1e-12 or hi > 1 + 1e-12:
        return None
    return ClosedFormPair(f"const(c={Fraction(c).limit_denominator(10**6)})",
                          Piecewise.constant(c), z, f, gamma)


def sample_pair(pair: ClosedFormPair, g: Grid):
    """u at nodes, z at face positions (boundary faces on the endpoints), f at nodes."""
    if g.dim != 1 or not np.allclose(g.extents[0], pair.domain):
        raise ValueError(f"sample_pair needs a 1D grid on {pair.domain}")
    x = g.axis_coords(0)
    return pair.u(x), pair.z(g.face_axis_coords(0)), pair.f(x)


def analytic_residuals(pair: ClosedFormPair, x, window: float = 1e-9) -> dict:
    """Exact pointwise defects of a closed-form pair.

    pde: -z'(x) chi*_{u>0} - f/u^gamma at points off the breakpoints
    (f/u taken as 0 where f = 0);
    interface: 1 - z nu_jump at the jump points of chi_{u>0};
    boundary: u (1 + z nu) at x = -1 and x = 1.
    """
    x = np.asarray(x, dtype=float)
    bp = np.asarray(pair.breakpoints)
    keep = np.all(np.abs(x[:, None] - bp[None, :]) > window, axis=1) if bp.size else np.ones(x.size, bool)
    x = x[keep]
    u, f = pair.u(x), pair.f(x)
    dz = pair.z.derivative()(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        src = np.where(f == 0, 0.0, f / np.abs(u) ** pair.gamma)
    pde = np.where(u > 0, -dz - src, 0.0)
    # where u = 0 the datum must vanish as well
    pde = np.where((u <= 0) & (f > 0), np.inf, pde)

    jumps = []
    for b in bp:
        left, right = pair.u(b - 10 * window), pair.u(b + 10 * window)
        if (left > 0) != (right > 0):
            nu = 1.0 if right > 0 else -1.0
            jumps.append(1.0 - pair.z(b) * nu)
    a, b = pair.domain
    bnd = [pair.u(a) * (1.0 + pair.z(a) * -1.0), pair.u(b) * (1.0 + pair.z(b) * 1.0)]
    return {"x": x, "pde": pde, "interface": np.array(jumps), "boundary": np.array(bnd)}


def oracle_pairs(name: str) -> list[ClosedFormPair]:
    """Resolve "example1", "example2" or "const:<preset>[:gamma]"."""
    if name == "example1":
        return example1_pairs()
    if name == "example2":
        return example2_pairs()
    if name.startswith("const:"):
        parts = name.split(":")
        fname = parts[1]
        gamma = float(parts[2]) if len(parts) > 2 else 1.0
        if fname not in PRESETS_1D:
            raise KeyError(f"unknown datum {fname!r}")
        pair = constant_solution(PRESETS_1D[fname](), gamma)
        if pair is None:
            raise ValueError(f"no constant solution for {fname!r}")
        return [pair]
    raise KeyError(f"unknown oracle {name!r}")
