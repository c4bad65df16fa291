"""Dynamical systems: Duffing, recast Rayleigh-Plesset, recast CRTBP.

Vector fields take the state with the component axis first, ``x.shape ==
(dim, ...)``, a time (broadcastable against ``x[0]``) and the fundamental
frequency, and return an array of the same shape as ``x``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.optimize import brentq

from .spectral import HarmonicBasis, Monomial, Polynomial, eval_poly, eval_series, poly_degree, project

VectorField = Callable[[np.ndarray, np.ndarray, float], np.ndarray]


@dataclass(frozen=True)
class Constraint:
    """Algebraic invariant ``mean(poly(x(t))) = 0``.

    In the algebraic system it replaces the constant-harmonic balance of
    component `row`, which pins the free integration constant that recasting
    introduces.
    """

    row: int
    poly: tuple[Monomial, ...]


@dataclass(frozen=True, eq=False)
class SystemDef:
    """A first-order system ``x' = f(x, t)``.

    Attributes
    ----------
    degree_phi : int or None
        Total polynomial degree (forcing factors count 1); ``None`` for a
        non-polynomial field.
    poly : tuple of polynomials, optional
        Monomial expansion of each component of the field; required by the
        exact frequency-domain residual.
    constraints : tuple of Constraint
        Invariants introduced by recasting.
    unfolding : tuple of polynomials, optional
        Direction ``g(x)`` of a dissipative unfolding term ``eps * g(x)`` for
        conservative autonomous systems, where ``eps`` becomes an unknown.
    original : SystemDef, optional
        For a recast system, the physical system whose state is the leading
        ``original.dim`` components.
    """

    name: str
    dim: int
    field: VectorField
    degree_phi: int | None
    autonomous: bool
    params: Mapping[str, float]
    poly: tuple[tuple[Monomial, ...], ...] | None = None
    constraints: tuple[Constraint, ...] = ()
    unfolding: tuple[tuple[Monomial, ...], ...] | None = None
    labels: tuple[str, ...] = ()
    original: "SystemDef | None" = None

    def __call__(self, x, t=0.0, omega=1.0):
        return self.field(np.asarray(x, dtype=float), t, omega)

    @property
    def polynomial(self) -> bool:
        return self.degree_phi is not None


def _mono(coef, dim, forcing=None, **exps) -> Monomial:
    """Monomial from keyword exponents such as ``_mono(2.0, 3, x0=1, x2=2)``."""
    powers = [0] * dim
    for key, p in exps.items():
        powers[int(key[1:])] = p
    return Monomial(float(coef), tuple(powers), forcing)


def poly_field(polys: Sequence[Polynomial]) -> VectorField:
    def f(x, t, omega):
        return np.stack([eval_poly(p, x, t, omega) for p in polys])

    return f


# ---------------------------------------------------------------------------
# linear test systems


def linear_system(matrix, forcing_cos=None, forcing_sin=None, name="linear") -> SystemDef:
    """``x' = L x + b_c cos(w t) + b_s sin(w t)``."""
    L = np.asarray(matrix, dtype=float)
    d = L.shape[0]
    bc = np.zeros(d) if forcing_cos is None else np.asarray(forcing_cos, dtype=float)
    bs = np.zeros(d) if forcing_sin is None else np.asarray(forcing_sin, dtype=float)
    polys = []
    for i in range(d):
        terms = [_mono(L[i, j], d, **{f"x{j}": 1}) for j in range(d) if L[i, j] != 0]
        if bc[i]:
            terms.append(_mono(bc[i], d, "cos"))
        if bs[i]:
            terms.append(_mono(bs[i], d, "sin"))
        polys.append(tuple(terms))

    def f(x, t, omega):
        out = np.tensordot(L, x, axes=(1, 0))
        if bc.any() or bs.any():
            c, s = np.cos(omega * np.asarray(t)), np.sin(omega * np.asarray(t))
            shape = (d,) + (1,) * (out.ndim - 1)
            out = out + bc.reshape(shape) * c + bs.reshape(shape) * s
        return out

    forced = bool(bc.any() or bs.any())
    return SystemDef(name, d, f, 1, not forced, {}, tuple(polys))


def linear_oscillator(c=0.1, k=1.0, F=1.0) -> SystemDef:
    """``x'' + c x' + k x = F sin(w t)``."""
    sys = linear_system([[0.0, 1.0], [-k, -c]], forcing_sin=[0.0, F], name="linear_oscillator")
    return SystemDef(sys.name, 2, sys.field, 1, False, {"c": c, "k": k, "F": F}, sys.poly,
                     labels=("x", "v"))


def linear_oscillator_response(c, k, F, omega) -> float:
    """Steady-state amplitude ``F / |k - w^2 + i c w|``."""
    return F / abs(k - omega**2 + 1j * c * omega)


# ---------------------------------------------------------------------------
# Duffing


@dataclass(frozen=True)
class DuffingParams:
    """``x'' + c x' + k x + sum_i alpha_i x^phi_i = F sin(w t)``.

    `alpha`/`phi` may be scalars or equal-length sequences for mixed
    nonlinearities.
    """

    c: float = 0.1
    k: float = 1.0
    alpha: float | Sequence[float] = 1.0
    phi: int | Sequence[int] = 3
    F: float = 1.0
    omega: float = 2.0

    def terms(self) -> list[tuple[float, int]]:
        alphas = np.atleast_1d(self.alpha).astype(float)
        phis = np.atleast_1d(self.phi).astype(int)
        if alphas.shape != phis.shape:
            raise ValueError("alpha and phi must have the same length")
        return list(zip(alphas.tolist(), phis.tolist()))


def duffing_system(p: DuffingParams = DuffingParams()) -> SystemDef:
    if p.F < 0:
        raise ValueError("forcing amplitude must be non-negative")
    terms = p.terms()
    if any(ph < 1 for _, ph in terms):
        raise ValueError("nonlinear degrees must be positive")

    def f(x, t, omega):
        x1, x2 = x[0], x[1]
        acc = -p.c * x2 - p.k * x1 + p.F * np.sin(omega * np.asarray(t))
        for a, ph in terms:
            acc = acc - a * x1**ph
        return np.stack([x2 + 0.0 * acc, acc])

    poly_acc = [_mono(-p.c, 2, x1=1), _mono(-p.k, 2, x0=1), _mono(p.F, 2, "sin")]
    poly_acc += [_mono(-a, 2, x0=ph) for a, ph in terms]
    polys = ((_mono(1.0, 2, x1=1),), tuple(poly_acc))
    phi = max(1, max(ph for _, ph in terms), poly_degree(poly_acc))
    params = {"c": p.c, "k": p.k, "F": p.F, "omega": p.omega}
    for i, (a, ph) in enumerate(terms):
        params[f"alpha{i}"], params[f"phi{i}"] = a, ph
    return SystemDef("duffing", 2, f, phi, False, params, polys, labels=("x", "v"))


# ---------------------------------------------------------------------------
# Rayleigh-Plesset


@dataclass(frozen=True)
class RayleighPlessetParams:
    """``R R'' = -3/2 R'^2 - A R'/R - B/R + C/R^3 + D - E cos(w t)``.

    Radius in micrometres, time in microseconds. The defaults describe a
    5 um air bubble in water (viscosity 1 mPa s, surface tension 72.5 mN/m,
    1 atm ambient, vapour pressure neglected) driven at 80 kPa and 50 kHz.
    """

    A: float = 4.0
    B: float = 145.0
    C: float = 16290.625
    D: float = -101.325
    E: float = 80.0
    omega: float = 0.1 * np.pi

    @property
    def equilibrium_radius(self) -> float:
        """Unforced equilibrium ``D R^3 - B R^2 + C = 0`` (largest real root)."""
        roots = np.roots([self.D, -self.B, 0.0, self.C])
        real = roots[np.abs(roots.imag) < 1e-9].real
        return float(real[real > 0].max())


def rayleigh_plesset_acceleration(p: RayleighPlessetParams, R, Rdot, t, omega):
    R, Rdot = np.asarray(R), np.asarray(Rdot)
    rhs = (-1.5 * Rdot**2 - p.A * Rdot / R - p.B / R + p.C / R**3 + p.D
           - p.E * np.cos(omega * np.asarray(t)))
    return rhs / R


def rayleigh_plesset_system(p: RayleighPlessetParams = RayleighPlessetParams()) -> SystemDef:
    """Original (non-polynomial) two-state form ``(R, R')``."""

    def f(x, t, omega):
        return np.stack([x[1] + 0.0 * x[0], rayleigh_plesset_acceleration(p, x[0], x[1], t, omega)])

    params = {k: getattr(p, k) for k in "ABCDE"} | {"omega": p.omega}
    return SystemDef("rayleigh_plesset", 2, f, None, False, params, labels=("R", "Rdot"))


def rayleigh_plesset_recast(p: RayleighPlessetParams = RayleighPlessetParams()) -> SystemDef:
    """Degree-4 polynomial form on ``(R, R', u)`` with ``u = 1/R``."""

    def f(x, t, omega):
        x1, x2, u = x[0], x[1], x[2]
        acc = (-1.5 * x2**2 * u - p.A * x2 * u**2 - p.B * u**2 + p.C * u**4
               + (p.D - p.E * np.cos(omega * np.asarray(t))) * u)
        return np.stack([x2 + 0.0 * acc, acc, -x2 * u**2 + 0.0 * acc])

    polys = (
        (_mono(1.0, 3, x1=1),),
        (
            _mono(-1.5, 3, x1=2, x2=1),
            _mono(-p.A, 3, x1=1, x2=2),
            _mono(-p.B, 3, x2=2),
            _mono(p.C, 3, x2=4),
            _mono(p.D, 3, x2=1),
            _mono(-p.E, 3, "cos", x2=1),
        ),
        (_mono(-1.0, 3, x1=1, x2=2),),
    )
    # u R = 1 on average fixes the constant in 1/u - R = const
    constraint = Constraint(2, (_mono(1.0, 3, x0=1, x2=1), _mono(-1.0, 3)))
    params = {k: getattr(p, k) for k in "ABCDE"} | {"omega": p.omega}
    return SystemDef("rayleigh_plesset_recast", 3, f, 4, False, params, polys,
                     (constraint,), labels=("R", "Rdot", "u"), original=rayleigh_plesset_system(p))


def rayleigh_plesset_consistent_state(x2d) -> np.ndarray:
    x = np.asarray(x2d, dtype=float)
    return np.concatenate([x, (1.0 / x[0])[None]], axis=0)


# ---------------------------------------------------------------------------
# circular restricted three-body problem

EARTH_MOON_MU = 0.012150585609624


@dataclass(frozen=True)
class CRTBPParams:
    mu: float = EARTH_MOON_MU
    libration_point: str = "L2"

    def __post_init__(self):
        if not 0.0 < self.mu <= 0.5:
            raise ValueError(f"mass ratio must lie in (0, 1/2], got {self.mu}")
        if self.libration_point not in ("L1", "L2"):
            raise ValueError("libration_point must be 'L1' or 'L2'")

    @property
    def libration_x(self) -> float:
        return libration_point_x(self.mu, self.libration_point)


def _collinear_gradient(x, mu):
    r1, r2 = x + mu, x - 1.0 + mu
    return x - (1.0 - mu) * r1 / abs(r1) ** 3 - mu * r2 / abs(r2) ** 3


def libration_point_x(mu: float, which: str = "L2") -> float:
    """x-coordinate of the collinear point L1 or L2 in the rotating frame."""
    if not 0.0 < mu <= 0.5:
        raise ValueError(f"mass ratio must lie in (0, 1/2], got {mu}")
    eps = 1e-14
    if which == "L1":
        lo, hi = -mu + eps, 1.0 - mu - eps
    elif which == "L2":
        lo, hi = 1.0 - mu + eps, 2.0
    else:
        raise ValueError(f"unknown libration point {which!r}")
    glo, ghi = _collinear_gradient(lo, mu), _collinear_gradient(hi, mu)
    if np.sign(glo) == np.sign(ghi):
        raise ValueError(f"no root bracketed for {which} at mu={mu}")
    return float(brentq(_collinear_gradient, lo, hi, args=(mu,), xtol=1e-15, rtol=4 * np.finfo(float).eps,
                        maxiter=500))


def effective_potential(pos, mu):
    """``U = (x^2 + y^2)/2 + (1-mu)/r1 + mu/r2``."""
    x, y, z = pos[0], pos[1], pos[2]
    r1 = np.sqrt((x + mu) ** 2 + y**2 + z**2)
    r2 = np.sqrt((x - 1.0 + mu) ** 2 + y**2 + z**2)
    if np.any(r1 == 0) or np.any(r2 == 0):
        raise ZeroDivisionError("state coincides with a primary")
    return 0.5 * (x**2 + y**2) + (1.0 - mu) / r1 + mu / r2


def crtbp_acceleration(state, mu):
    x, y, z, vx, vy, vz = state[:6]
    r1_3 = ((x + mu) ** 2 + y**2 + z**2) ** 1.5
    r2_3 = ((x - 1.0 + mu) ** 2 + y**2 + z**2) ** 1.5
    ax = 2.0 * vy + x - (1.0 - mu) * (x + mu) / r1_3 - mu * (x - 1.0 + mu) / r2_3
    ay = -2.0 * vx + y - (1.0 - mu) * y / r1_3 - mu * y / r2_3
    az = -(1.0 - mu) * z / r1_3 - mu * z / r2_3
    return np.stack([ax, ay, az])


def _velocity_unfolding(dim):
    # eps * v in the accelerations: d(energy)/dt = eps |v|^2
    g = [()] * dim
    for k in range(3):
        g[3 + k] = (_mono(1.0, dim, **{f"x{3 + k}": 1}),)
    return tuple(g)


def crtbp_system(p: CRTBPParams = CRTBPParams()) -> SystemDef:
    """Original six-state CRTBP in the rotating frame (non-polynomial)."""
    mu = p.mu

    def f(x, t, omega):
        return np.concatenate([x[3:6], crtbp_acceleration(x, mu)], axis=0)

    return SystemDef("crtbp", 6, f, None, True, {"mu": mu, "L": p.libration_x},
                     unfolding=_velocity_unfolding(6),
                     labels=("x", "y", "z", "vx", "vy", "vz"))


def crtbp_recast(p: CRTBPParams = CRTBPParams()) -> SystemDef:
    """Degree-5 polynomial CRTBP on ``(x, y, z, vx, vy, vz, u1, u2)``, ``u_i = 1/r_i``."""
    mu = p.mu
    d = 8

    def f(s, t, omega):
        x, y, z, vx, vy, vz, u1, u2 = s
        a1, a2 = (1.0 - mu) * u1**3, mu * u2**3
        ax = 2.0 * vy + x - a1 * (x + mu) - a2 * (x - 1.0 + mu)
        ay = -2.0 * vx + y - a1 * y - a2 * y
        az = -a1 * z - a2 * z
        common = y * vy + z * vz
        du1 = -(u1**3) * ((x + mu) * vx + common)
        du2 = -(u2**3) * ((x - 1.0 + mu) * vx + common)
        return np.stack([vx, vy, vz, ax, ay, az, du1, du2])

    m = lambda c, **e: _mono(c, d, **e)  # noqa: E731
    polys = (
        (m(1.0, x3=1),),
        (m(1.0, x4=1),),
        (m(1.0, x5=1),),
        (
            m(2.0, x4=1), m(1.0, x0=1),
            m(-(1.0 - mu), x0=1, x6=3), m(-(1.0 - mu) * mu, x6=3),
            m(-mu, x0=1, x7=3), m(-mu * (mu - 1.0), x7=3),
        ),
        (m(-2.0, x3=1), m(1.0, x1=1), m(-(1.0 - mu), x1=1, x6=3), m(-mu, x1=1, x7=3)),
        (m(-(1.0 - mu), x2=1, x6=3), m(-mu, x2=1, x7=3)),
        (
            m(-1.0, x6=3, x0=1, x3=1), m(-mu, x6=3, x3=1),
            m(-1.0, x6=3, x1=1, x4=1), m(-1.0, x6=3, x2=1, x5=1),
        ),
        (
            m(-1.0, x7=3, x0=1, x3=1), m(-(mu - 1.0), x7=3, x3=1),
            m(-1.0, x7=3, x1=1, x4=1), m(-1.0, x7=3, x2=1, x5=1),
        ),
    )

    def _distance_constraint(row, idx, shift):
        # u^2 ((x + shift)^2 + y^2 + z^2) - 1
        key = f"x{idx}"
        return Constraint(row, (
            m(1.0, x0=2, **{key: 2}), m(2.0 * shift, x0=1, **{key: 2}), m(shift**2, **{key: 2}),
            m(1.0, x1=2, **{key: 2}), m(1.0, x2=2, **{key: 2}), m(-1.0),
        ))

    constraints = (_distance_constraint(6, 6, mu), _distance_constraint(7, 7, mu - 1.0))
    return SystemDef("crtbp_recast", d, f, 5, True, {"mu": mu, "L": p.libration_x}, polys,
                     constraints, _velocity_unfolding(d),
                     labels=("x", "y", "z", "vx", "vy", "vz", "u1", "u2"), original=crtbp_system(p))


def crtbp_consistent_state(state6, mu) -> np.ndarray:
    """Append ``u1 = 1/r1`` and ``u2 = 1/r2`` to physical states (component axis first)."""
    s = np.asarray(state6, dtype=float)
    x, y, z = s[0], s[1], s[2]
    u1 = 1.0 / np.sqrt((x + mu) ** 2 + y**2 + z**2)
    u2 = 1.0 / np.sqrt((x - 1.0 + mu) ** 2 + y**2 + z**2)
    return np.concatenate([s[:6], u1[None], u2[None]], axis=0)


def crtbp_linear_modes(p: CRTBPParams = CRTBPParams()):
    """In-plane and out-of-plane oscillation frequencies at the libration point.

    Returns
    -------
    omega_inplane, omega_vertical : float
    inplane_shape : (6,) complex ndarray
        Eigenvector of the variational matrix for ``i * omega_inplane``.
    """
    mu, xL = p.mu, p.libration_x
    c2 = (1.0 - mu) / abs(xL + mu) ** 3 + mu / abs(xL - 1.0 + mu) ** 3
    Amat = np.zeros((6, 6))
    Amat[:3, 3:] = np.eye(3)
    Amat[3, 0], Amat[4, 1], Amat[5, 2] = 1.0 + 2.0 * c2, 1.0 - c2, -c2
    Amat[3, 4], Amat[4, 3] = 2.0, -2.0
    lam, vec = np.linalg.eig(Amat)
    centre = [i for i in range(6) if abs(lam[i].real) < 1e-9 and lam[i].imag > 0]
    inplane = [i for i in centre if abs(vec[2, i]) < 1e-9 and abs(vec[5, i]) < 1e-9]
    vertical = [i for i in centre if i not in inplane]
    i_in = inplane[0]
    return float(lam[i_in].imag), float(lam[vertical[0]].imag), vec[:, i_in]


CRTBP_FAMILIES = ("planar", "halo", "vertical", "dro")

# coordinate whose first sine coefficient is pinned for each family
CRTBP_ANCHOR = {"planar": 1, "halo": 1, "vertical": 2, "dro": 1}


def crtbp_lift(coeffs6, basis: HarmonicBasis, mu: float, oversample: int = 8) -> np.ndarray:
    """Coefficients of the recast state ``(x, ..., vz, 1/r1, 1/r2)`` from a 6-state series."""
    M = oversample * basis.order + 1
    t = np.arange(M) * basis.period / M
    return project(crtbp_consistent_state(eval_series(coeffs6, basis, t), mu), basis, t)


def crtbp_seed(family: str, basis: HarmonicBasis, amplitude=None,
               p: CRTBPParams = CRTBPParams(), recast: bool = True) -> np.ndarray:
    """Rough one-harmonic guess for a periodic orbit family near the libration point.

    Parameters
    ----------
    family : {"planar", "halo", "vertical", "dro"}
    amplitude : float or (float, float), optional
        ``planar``: peak y excursion (shape from the linear in-plane mode).
        ``halo``: ``(Ay, Az)``, the planar guess plus an in-phase z motion.
        ``vertical``: peak z excursion.
        ``dro``: radius of the retrograde circle about the second primary;
        by default the Kepler radius for which the rotating-frame frequency
        equals ``basis.omega``.

    The y (z for vertical orbits) motion is a pure cosine, matching the
    phase anchor in `CRTBP_ANCHOR`.
    """
    if family not in CRTBP_FAMILIES:
        raise ValueError(f"unknown family {family!r}; expected one of {CRTBP_FAMILIES}")
    mu, xL, w = p.mu, p.libration_x, basis.omega
    c = np.zeros((6, basis.size))
    c[0, 0] = xL
    if family in ("planar", "halo"):
        Ay = amplitude[0] if family == "halo" else amplitude
        _, _, v = crtbp_linear_modes(p)
        av = (Ay / v[1]) * v
        c[:, 1] += av.real
        c[:, 2] -= av.imag
        if family == "halo":
            sgn = np.sign(c[0, 2]) or 1.0
            c[2, 2] = sgn * amplitude[1]
            c[5, 1] = w * c[2, 2]
    elif family == "vertical":
        c[2, 1] = amplitude
        c[5, 2] = -w * amplitude
    else:
        if amplitude is None and w <= 1.0:
            raise ValueError("retrograde orbits need omega > 1 for the default radius")
        rho = amplitude if amplitude is not None else (mu / (w - 1.0) ** 2) ** (1.0 / 3.0)
        c[0, 0] = 1.0 - mu
        c[0, 2] = rho
        c[1, 1] = rho
        c[3, 1] = w * rho
        c[4, 2] = -w * rho
    return crtbp_lift(c, basis, mu) if recast else c
