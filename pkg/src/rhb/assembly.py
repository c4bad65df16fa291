"""Algebraic residuals of the harmonic balance family.

Two formulations share one unknown layout (the ``d * (2N+1)`` Fourier
coefficients):

* time domain, ``w A x - E_plus f(E x)``, which is HDHB, RHB or AFT
  depending only on the number of collocation nodes;
* frequency domain, ``w A x - h(x)`` with ``h`` the exact low harmonics of a
  polynomial field.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .spectral import (
    HarmonicBasis,
    SpectralOperators,
    build_grid,
    build_operators,
    differentiation_operator,
    eval_poly,
    poly_harmonics_full,
)
from .systems import SystemDef

MODES = ("RHB", "HDHB", "AFT", "CUSTOM_M")


class NonFiniteResidual(FloatingPointError):
    pass


def node_count(mode: str, N: int, degree_phi: int | None, M: int | None = None) -> int:
    """Collocation count implied by a method name."""
    mode = mode.upper()
    if mode == "HDHB":
        return 2 * N + 1
    if mode == "CUSTOM_M":
        if M is None or M < 2 * N + 1:
            raise ValueError(f"CUSTOM_M needs an explicit M >= 2N+1 = {2 * N + 1}, got {M}")
        return int(M)
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    if degree_phi is None:
        raise ValueError(
            f"{mode} needs a polynomial field; recast the system or use CUSTOM_M with an explicit M"
        )
    if mode == "RHB":
        return (degree_phi + 1) * N + 1
    return 2 * degree_phi * N + 1


@dataclass(frozen=True)
class MethodConfig:
    mode: str
    order: int
    omega: float
    M: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "mode", self.mode.upper())
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        HarmonicBasis(self.order, self.omega)
        if self.mode == "CUSTOM_M":
            node_count(self.mode, self.order, None, self.M)

    @property
    def basis(self) -> HarmonicBasis:
        return HarmonicBasis(self.order, self.omega)

    def nodes(self, degree_phi: int | None) -> int:
        return node_count(self.mode, self.order, degree_phi, self.M)

    def with_omega(self, omega: float) -> "MethodConfig":
        return MethodConfig(self.mode, self.order, omega, self.M)


@dataclass(frozen=True)
class PhaseAnchor:
    """Removes the time-shift freedom of an autonomous system.

    The sine coefficient of the first harmonic of `coordinate` is fixed to
    zero. ``closure="unfold"`` adds the scalar of the system's unfolding term
    as an unknown; ``closure="drop"`` instead deletes that coefficient's own
    balance row.
    """

    coordinate: int = 0
    closure: str = "unfold"

    def __post_init__(self):
        if self.closure not in ("unfold", "drop"):
            raise ValueError("closure must be 'unfold' or 'drop'")


@dataclass(frozen=True, eq=False)
class ResidualSystem:
    """Square algebraic system in the (packed) Fourier coefficients.

    Call with a vector of length `n_unknowns`, or a batch ``(..., n_unknowns)``.
    """

    system: SystemDef
    basis: HarmonicBasis
    formulation: str
    M: int | None
    ops: SpectralOperators | None
    anchor: PhaseAnchor | None
    func: Callable[[np.ndarray], np.ndarray]

    @property
    def coeff_shape(self) -> tuple[int, int]:
        return (self.system.dim, self.basis.size)

    @property
    def pinned(self) -> int | None:
        if self.anchor is None:
            return None
        return self.anchor.coordinate * self.basis.size + 2

    @property
    def unfolded(self) -> bool:
        return self.anchor is not None and self.anchor.closure == "unfold"

    @property
    def n_unknowns(self) -> int:
        n = self.system.dim * self.basis.size
        if self.anchor is not None:
            n -= 1
        return n + self.unfolded

    def __call__(self, z) -> np.ndarray:
        return self.func(np.asarray(z, dtype=float))

    def pack(self, coeffs, eps: float = 0.0) -> np.ndarray:
        c = np.asarray(coeffs, dtype=float).reshape(self.coeff_shape).ravel()
        if self.pinned is not None:
            c = np.delete(c, self.pinned)
        if self.unfolded:
            c = np.append(c, eps)
        return c

    def unpack(self, z):
        """Full ``(..., d, 2N+1)`` coefficients and the unfolding scalar."""
        z = np.asarray(z, dtype=float)
        eps = np.zeros(z.shape[:-1])
        if self.unfolded:
            eps, z = z[..., -1], z[..., :-1]
        if self.pinned is not None:
            z = np.insert(z, self.pinned, 0.0, axis=-1)
        return z.reshape(z.shape[:-1] + self.coeff_shape), eps

    def coefficients(self, z) -> np.ndarray:
        return self.unpack(z)[0]

    def with_omega(self, omega: float) -> "ResidualSystem":
        """Same residual family at another fundamental frequency."""
        cfg = MethodConfig("CUSTOM_M", self.basis.order, omega, self.M) if self.M else None
        if self.formulation == "time":
            return build_time_domain_residual(self.system, cfg, anchor=self.anchor)
        return build_hb_residual(self.system, self.basis.with_omega(omega), anchor=self.anchor)


def _default_anchor(sys: SystemDef, anchor):
    if not sys.autonomous:
        return None
    if anchor is None:
        anchor = PhaseAnchor(0, "unfold" if sys.unfolding is not None else "drop")
    if anchor.closure == "unfold" and sys.unfolding is None:
        raise ValueError(f"system {sys.name!r} defines no unfolding term; use closure='drop'")
    return anchor


def _finish(R, sys: SystemDef, anchor, eps, unfold_proj, constraint_means):
    """Apply unfolding, constraint rows and row dropping to ``(..., d, S)`` balances."""
    if anchor is not None and anchor.closure == "unfold":
        R = R - eps[..., None, None] * unfold_proj
    for c, mean in zip(sys.constraints, constraint_means):
        R[..., c.row, 0] = mean
    flat = R.reshape(R.shape[:-2] + (-1,))
    if anchor is not None and anchor.closure == "drop":
        flat = np.delete(flat, anchor.coordinate * R.shape[-1] + 2, axis=-1)
    return flat


def build_time_domain_residual(sys: SystemDef, cfg: MethodConfig, anchor: PhaseAnchor | None = None,
                               degree_phi: int | None = None) -> ResidualSystem:
    """Collocation residual ``w A x - E_plus f(E x)`` in the Fourier unknowns.

    The node count comes from `cfg` (HDHB ``2N+1``, RHB ``(phi+1)N+1``, AFT
    ``2 phi N + 1`` or an explicit ``M``).
    """
    phi = sys.degree_phi if degree_phi is None else degree_phi
    M = cfg.nodes(phi)
    basis = cfg.basis
    ops = build_operators(basis, build_grid(basis, M), max(phi or 1, 1))
    anchor = _default_anchor(sys, anchor)
    E, Ep, A, t = ops.E, ops.E_plus, ops.A, ops.grid.nodes
    omega = basis.omega
    proto = ResidualSystem(sys, basis, "time", M, ops, anchor, lambda z: z)

    def residual(z):
        X, eps = proto.unpack(z)
        xt = np.moveaxis(X @ E.T, -2, 0)
        ft = np.moveaxis(sys.field(xt, t, omega), 0, -2)
        R = omega * X @ A.T - ft @ Ep.T
        unfold = None
        if anchor is not None and anchor.closure == "unfold":
            g = np.stack([eval_poly(p, xt, t, omega) for p in sys.unfolding])
            unfold = np.moveaxis(g, 0, -2) @ Ep.T
        means = [eval_poly(c.poly, xt, t, omega) @ Ep[0] for c in sys.constraints]
        return _finish(R, sys, anchor, eps, unfold, means)

    return ResidualSystem(sys, basis, "time", M, ops, anchor, residual)


def build_hb_residual(sys: SystemDef, basis: HarmonicBasis, anchor: PhaseAnchor | None = None) -> ResidualSystem:
    """Aliasing-free harmonic balance ``w A x - h(x)`` by exact convolution."""
    if sys.poly is None or sys.degree_phi is None:
        raise ValueError(f"system {sys.name!r} is not polynomial; exact harmonic balance needs a recast form")
    anchor = _default_anchor(sys, anchor)
    A = differentiation_operator(basis.order)
    S, phi, omega = basis.size, sys.degree_phi, basis.omega
    proto = ResidualSystem(sys, basis, "frequency", None, None, anchor, lambda z: z)

    def residual(z):
        X, eps = proto.unpack(z)
        h = poly_harmonics_full(X, sys.poly, phi)[..., :S]
        R = omega * X @ A.T - h
        unfold = None
        if anchor is not None and anchor.closure == "unfold":
            unfold = poly_harmonics_full(X, sys.unfolding, phi)[..., :S]
        means = [poly_harmonics_full(X, [c.poly], phi)[..., 0, 0] for c in sys.constraints]
        return _finish(R, sys, anchor, eps, unfold, means)

    return ResidualSystem(sys, basis, "frequency", None, None, anchor, residual)


def jacobian(res: ResidualSystem, z, residual0=None) -> np.ndarray:
    """Central-difference Jacobian, step ``1e-6 * max(1, |z_j|)`` per unknown."""
    z = np.asarray(z, dtype=float)
    n = z.size
    h = 1e-6 * np.maximum(1.0, np.abs(z))
    J = np.empty((n, n))
    width = res.system.dim * (res.M or res.basis.size * (res.system.degree_phi or 1))
    chunk = max(1, 2_000_000 // width)
    for start in range(0, n, chunk):
        idx = np.arange(start, min(n, start + chunk))
        pts = np.repeat(z[None, :], 2 * idx.size, axis=0)
        pts[np.arange(idx.size), idx] += h[idx]
        pts[idx.size + np.arange(idx.size), idx] -= h[idx]
        vals = res(pts)
        if not np.all(np.isfinite(vals)):
            raise NonFiniteResidual("residual is not finite at a perturbed point")
        J[:, idx] = ((vals[: idx.size] - vals[idx.size :]) / (2.0 * h[idx, None])).T
    return J
