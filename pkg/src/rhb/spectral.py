"""Truncated Fourier bases, collocation operators and aliasing analysis.

Coefficient vectors are real and ordered ``[x0, cos1, sin1, cos2, sin2, ...,
cosN, sinN]``; a ``d``-dimensional state carries a ``(d, 2N+1)`` array. The
collocation grid is ``t_i = (i - 1) T / M`` for ``i = 1..M``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import sparse


@dataclass(frozen=True)
class HarmonicBasis:
    """Truncated Fourier basis of order ``N`` at fundamental frequency ``omega``."""

    order: int
    omega: float

    def __post_init__(self):
        if int(self.order) != self.order or self.order < 1:
            raise ValueError(f"order must be a positive integer, got {self.order!r}")
        if not np.isfinite(self.omega) or self.omega <= 0:
            raise ValueError(f"omega must be positive, got {self.omega!r}")

    @property
    def size(self) -> int:
        return 2 * self.order + 1

    @property
    def period(self) -> float:
        return 2.0 * np.pi / self.omega

    def with_omega(self, omega: float) -> "HarmonicBasis":
        return HarmonicBasis(self.order, omega)


@dataclass(frozen=True, eq=False)
class CollocationGrid:
    basis: HarmonicBasis
    M: int
    nodes: np.ndarray


@dataclass(frozen=True, eq=False)
class SpectralOperators:
    """Collocation matrices for one ``(N, M, phi, omega)`` combination.

    Attributes
    ----------
    E : (M, 2N+1) ndarray
        Maps coefficients to node values.
    E_plus : (2N+1, M) ndarray
        Explicit left inverse of ``E`` (discrete Fourier projection).
    A : (2N+1, 2N+1) ndarray
        Harmonic differentiation operator, ``d/dt <-> omega * A``.
    E1 : (M, 2N(phi-1)) ndarray
        Node values of harmonics ``N+1 .. phi*N``.
    E_alias : (2N+1, 2N(phi-1)) ndarray
        Aliasing matrix ``E_plus @ E1``.
    """

    basis: HarmonicBasis
    grid: CollocationGrid
    degree: int
    E: np.ndarray
    E_plus: np.ndarray
    A: np.ndarray
    E1: np.ndarray
    E_alias: np.ndarray


def _readonly(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def build_grid(basis: HarmonicBasis, M: int) -> CollocationGrid:
    """Equispaced collocation nodes over one period, starting at ``t = 0``."""
    if int(M) != M or M < basis.size:
        raise ValueError(
            f"M={M} < 2N+1={basis.size}: collocation matrix would be rank deficient"
        )
    M = int(M)
    nodes = 2.0 * np.pi * np.arange(M) / (M * basis.omega)
    return CollocationGrid(basis, M, _readonly(nodes))


def harmonic_columns(harmonics, omega: float, t) -> np.ndarray:
    """Interleaved ``cos(n w t), sin(n w t)`` columns for each ``n`` in `harmonics`."""
    n = np.asarray(harmonics, dtype=float)
    phase = omega * np.asarray(t, dtype=float)[:, None] * n[None, :]
    out = np.empty((phase.shape[0], 2 * n.size))
    out[:, 0::2] = np.cos(phase)
    out[:, 1::2] = np.sin(phase)
    return out


def collocation_matrix(basis: HarmonicBasis, t) -> np.ndarray:
    t = np.atleast_1d(np.asarray(t, dtype=float))
    return np.hstack(
        [np.ones((t.size, 1)), harmonic_columns(np.arange(1, basis.order + 1), basis.omega, t)]
    )


def differentiation_operator(order: int) -> np.ndarray:
    """Block-diagonal ``A`` with blocks ``n [[0, 1], [-1, 0]]``."""
    A = np.zeros((2 * order + 1, 2 * order + 1))
    for n in range(1, order + 1):
        A[2 * n - 1, 2 * n] = n
        A[2 * n, 2 * n - 1] = -n
    return A


def build_operators(basis: HarmonicBasis, grid: CollocationGrid, degree_phi: int) -> SpectralOperators:
    if grid.basis != basis:
        raise ValueError("grid was built for a different basis")
    if int(degree_phi) != degree_phi or degree_phi < 1:
        raise ValueError(f"degree_phi must be a positive integer, got {degree_phi!r}")
    N, M, t = basis.order, grid.M, grid.nodes
    E = collocation_matrix(basis, t)
    # explicit projection: (2/M) E^T with the constant row halved
    E_plus = (2.0 / M) * E.T
    E_plus[0] *= 0.5
    A = differentiation_operator(N)
    E1 = harmonic_columns(np.arange(N + 1, degree_phi * N + 1), basis.omega, t)
    E_alias = E_plus @ E1
    return SpectralOperators(
        basis=basis,
        grid=grid,
        degree=int(degree_phi),
        E=_readonly(E),
        E_plus=_readonly(E_plus),
        A=_readonly(A),
        E1=_readonly(E1.reshape(M, 2 * N * (degree_phi - 1))),
        E_alias=_readonly(E_alias.reshape(2 * N + 1, 2 * N * (degree_phi - 1))),
    )


def operators_for(N: int, omega: float, M: int, degree_phi: int = 1) -> SpectralOperators:
    basis = HarmonicBasis(N, omega)
    return build_operators(basis, build_grid(basis, M), degree_phi)


# ---------------------------------------------------------------------------
# aliasing rules


def predict_alias_entries(N: int, degree_phi: int, M: int) -> sparse.csr_array:
    """Closed-form aliasing matrix built from index rules alone.

    With ``t_n = 2 pi (n-1) / (M w)`` every entry of ``E_plus @ E1`` reduces to
    sums ``(1/M) sum_n cos(m w t_n)`` that equal 1 when ``M`` divides ``m`` and
    0 otherwise, and all ``sin`` sums vanish. Rows (1-based ``i``) hold the
    constant (``i = 1``), ``cos(i/2)`` (``i`` even) or ``sin((i-1)/2)`` (``i``
    odd); columns (1-based ``j``) hold ``cos(N + (j+1)/2)`` (``j`` odd) or
    ``sin(N + j/2)`` (``j`` even). For ``k = 1 .. (phi+1)N // M``:

    * constant row, cos column: ``+1`` when ``j = 2(kM - N) - 1``;
    * cos row, cos column: ``+1`` when ``i + j = 2(kM - N) - 1`` and
      ``+1`` when ``j - i = 2(kM - N) - 1``;
    * sin row, sin column: ``-1`` when ``i + j = 2(kM - N) + 1`` and
      ``+1`` when ``j - i = 2(kM - N) - 1``;
    * every mixed sin/cos entry is zero.
    """
    if M < 2 * N + 1:
        raise ValueError(f"M={M} < 2N+1={2 * N + 1}")
    if degree_phi < 2:
        raise ValueError("aliasing needs degree_phi >= 2")
    rows, cols = 2 * N + 1, 2 * N * (degree_phi - 1)
    entries: dict[tuple[int, int], int] = {}

    def add(i, j, value):
        if 1 <= i <= rows and 1 <= j <= cols:
            entries[(i - 1, j - 1)] = entries.get((i - 1, j - 1), 0) + value

    for k in range(1, (degree_phi + 1) * N // M + 1):
        s = 2 * (k * M - N)
        add(1, s - 1, 1)
        for i in range(2, rows + 1):
            if i % 2 == 0:
                j = s - 1 - i
                if j % 2 == 1:
                    add(i, j, 1)
                j = s - 1 + i
                if j % 2 == 1:
                    add(i, j, 1)
            else:
                j = s + 1 - i
                if j % 2 == 0:
                    add(i, j, -1)
                j = s - 1 + i
                if j % 2 == 0:
                    add(i, j, 1)
    keys = [key for key, v in entries.items() if v != 0]
    data = np.array([entries[key] for key in keys], dtype=float)
    r = np.array([key[0] for key in keys], dtype=int)
    c = np.array([key[1] for key in keys], dtype=int)
    return sparse.csr_array((data, (r, c)), shape=(rows, cols))


def fold_wavenumber(n: int, M: int) -> int:
    """Alias of wavenumber `n` on an ``M``-node periodic grid.

    The aliasing limit is ``L = M / 2``; the result ``n - 2 m L`` lies in
    ``[-L, L)``.
    """
    if M < 2:
        raise ValueError("need at least two nodes")
    n, M = int(n), int(M)
    m = (2 * n + M) // (2 * M)
    return n - m * M


# ---------------------------------------------------------------------------
# evaluation


def _as_coeff_array(coeffs, basis: HarmonicBasis) -> np.ndarray:
    c = np.asarray(coeffs, dtype=float)
    if c.shape[-1] != basis.size:
        raise ValueError(f"expected trailing length {basis.size}, got {c.shape}")
    return c


def eval_series(coeffs, basis: HarmonicBasis, t) -> np.ndarray:
    """Evaluate the series at time(s) `t`.

    Returns shape ``coeffs.shape[:-1] + np.shape(t)``.
    """
    c = _as_coeff_array(coeffs, basis)
    t = np.asarray(t, dtype=float)
    E = collocation_matrix(basis, t.ravel())
    return (c @ E.T).reshape(c.shape[:-1] + t.shape)


def eval_series_derivative(coeffs, basis: HarmonicBasis, t) -> np.ndarray:
    c = _as_coeff_array(coeffs, basis)
    dc = basis.omega * c @ differentiation_operator(basis.order).T
    return eval_series(dc, basis, t)


def resize_order(coeffs, order: int) -> np.ndarray:
    """Truncate or zero-pad coefficients to truncation order `order`."""
    c = np.asarray(coeffs, dtype=float)
    out = np.zeros(c.shape[:-1] + (2 * order + 1,))
    k = min(c.shape[-1], out.shape[-1])
    out[..., :k] = c[..., :k]
    return out


def project(values, basis: HarmonicBasis, t) -> np.ndarray:
    """Least-squares Fourier coefficients of samples `values` taken at `t`.

    For an equispaced grid this is the explicit ``E_plus`` projection; any
    other sampling falls back to a least-squares fit.
    """
    t = np.asarray(t, dtype=float)
    values = np.asarray(values, dtype=float)
    E = collocation_matrix(basis, t)
    sol, *_ = np.linalg.lstsq(E, np.moveaxis(values, -1, 0).reshape(t.size, -1), rcond=None)
    return np.moveaxis(sol.reshape((basis.size,) + values.shape[:-1]), 0, -1)


# ---------------------------------------------------------------------------
# polynomial nonlinearities


@dataclass(frozen=True)
class Monomial:
    """``coef * prod(x_k ** powers[k])``, optionally times ``cos(w t)``/``sin(w t)``."""

    coef: float
    powers: tuple[int, ...]
    forcing: str | None = None

    def __post_init__(self):
        if self.forcing not in (None, "cos", "sin"):
            raise ValueError(f"forcing must be None, 'cos' or 'sin', got {self.forcing!r}")
        if any(int(p) != p or p < 0 for p in self.powers):
            raise ValueError(f"powers must be non-negative integers, got {self.powers}")

    @property
    def degree(self) -> int:
        return sum(self.powers) + (self.forcing is not None)


Polynomial = Sequence[Monomial]


def poly_degree(poly: Polynomial) -> int:
    return max((m.degree for m in poly if m.coef != 0), default=0)


def eval_poly(poly: Polynomial, x, t=0.0, omega: float = 1.0) -> np.ndarray:
    """Evaluate a polynomial at states `x` (state axis first)."""
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    out = np.zeros(np.broadcast_shapes(x.shape[1:], t.shape))
    for m in poly:
        term = np.full(out.shape, float(m.coef))
        for k, p in enumerate(m.powers):
            if p:
                term = term * x[k] ** p
        if m.forcing == "cos":
            term = term * np.cos(omega * t)
        elif m.forcing == "sin":
            term = term * np.sin(omega * t)
        out = out + term
    return out


def _two_sided(c: np.ndarray) -> np.ndarray:
    """Real ``[x0, cos1, sin1, ...]`` -> complex coefficients for ``n = -N..N``."""
    N = (c.shape[-1] - 1) // 2
    pos = 0.5 * (c[..., 1::2] - 1j * c[..., 2::2])
    z = np.empty(c.shape[:-1] + (2 * N + 1,), dtype=complex)
    z[..., N] = c[..., 0]
    z[..., N + 1 :] = pos
    z[..., :N] = np.conj(pos[..., ::-1])
    return z


def _one_sided(z: np.ndarray) -> np.ndarray:
    K = (z.shape[-1] - 1) // 2
    out = np.empty(z.shape[:-1] + (2 * K + 1,))
    out[..., 0] = z[..., K].real
    out[..., 1::2] = 2.0 * z[..., K + 1 :].real
    out[..., 2::2] = -2.0 * z[..., K + 1 :].imag
    return out


def _convolve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Linear convolution along the last axis, broadcasting leading axes."""
    la, lb = a.shape[-1], b.shape[-1]
    if la < lb:
        a, b, la, lb = b, a, lb, la
    out = np.zeros(np.broadcast_shapes(a.shape[:-1], b.shape[:-1]) + (la + lb - 1,), dtype=complex)
    for j in range(lb):
        out[..., j : j + la] += a * b[..., j : j + 1]
    return out


_FORCING = {
    "cos": np.array([0.5, 0.0, 0.5], dtype=complex),
    "sin": np.array([0.5j, 0.0, -0.5j], dtype=complex),
}


def _pad(z: np.ndarray, K: int) -> np.ndarray:
    k = (z.shape[-1] - 1) // 2
    if k == K:
        return z
    width = [(0, 0)] * (z.ndim - 1) + [(K - k, K - k)]
    return np.pad(z, width)


def poly_harmonics_full(coeffs, polys: Sequence[Polynomial], degree_phi: int) -> np.ndarray:
    """Exact harmonics ``0 .. phi*N`` of each polynomial applied to the series.

    Products are expanded by direct trigonometric convolution, so nothing is
    sampled and nothing aliases.

    Parameters
    ----------
    coeffs : (..., d, 2N+1) array_like
    polys : sequence of polynomials in the ``d`` state components
    degree_phi : int
        Declared degree; harmonics above ``phi*N`` raise.

    Returns
    -------
    (..., len(polys), 2*phi*N + 1) ndarray
    """
    c = np.asarray(coeffs, dtype=float)
    d, N = c.shape[-2], (c.shape[-1] - 1) // 2
    K = degree_phi * N
    for poly in polys:
        deg = poly_degree(poly)
        if deg > degree_phi:
            raise ValueError(f"polynomial degree {deg} exceeds declared degree {degree_phi}")
        for m in poly:
            if len(m.powers) != d:
                raise ValueError(f"monomial has {len(m.powers)} powers for a {d}-state series")
    z = _two_sided(c)
    powers: list[list[np.ndarray]] = []
    for k in range(d):
        top = max((m.powers[k] for poly in polys for m in poly), default=0)
        cache = [np.ones(z.shape[:-2] + (1,), dtype=complex)]
        for _ in range(top):
            cache.append(_convolve(cache[-1], z[..., k, :]))
        powers.append(cache)
    out = np.zeros(c.shape[:-2] + (len(polys), 2 * K + 1), dtype=complex)
    for row, poly in enumerate(polys):
        for m in poly:
            if m.coef == 0:
                continue
            term = np.full(c.shape[:-2] + (1,), complex(m.coef))
            for k, p in enumerate(m.powers):
                if p:
                    term = _convolve(term, powers[k][p])
            if m.forcing is not None:
                term = _convolve(term, _FORCING[m.forcing])
            out[..., row, :] += _pad(term, K)
    return _one_sided(out)


def exact_poly_harmonics(coeffs, poly: Polynomial, basis: HarmonicBasis, degree_phi: int | None = None):
    """Exact Fourier coefficients of ``poly(x(t))`` split at order ``N``.

    Returns
    -------
    h : ndarray, trailing length ``2N+1``
        Harmonics ``0 .. N``.
    h_high : ndarray, trailing length ``2N(phi-1)``
        Harmonics ``N+1 .. phi*N``.
    """
    c = _as_coeff_array(coeffs, basis)
    if c.ndim == 1:
        c = c[None, :]
    phi = poly_degree(poly) if degree_phi is None else degree_phi
    phi = max(phi, 1)
    full = poly_harmonics_full(c, [poly], phi)[..., 0, :]
    return full[..., : basis.size], full[..., basis.size :]


def random_polynomial(rng: np.random.Generator, dim: int, degree: int, terms: int = 4,
                      forcing: bool = False) -> Polynomial:
    """Random polynomial of exact total degree `degree` in `dim` variables.

    The first monomial carries the full degree; the others have random
    degrees ``0 .. degree``. With `forcing`, one degree-1 factor of a
    ``cos``/``sin`` term may be replaced by the forcing.
    """
    out = []
    for k in range(terms):
        deg = degree if k == 0 else int(rng.integers(0, degree + 1))
        powers = np.bincount(rng.integers(0, dim, deg), minlength=dim) if deg else np.zeros(dim, int)
        f = None
        if forcing and deg >= 1 and rng.random() < 0.5:
            f = "cos" if rng.random() < 0.5 else "sin"
            j = int(np.flatnonzero(powers)[0])
            powers[j] -= 1
        out.append(Monomial(float(rng.uniform(-1, 1)), tuple(int(p) for p in powers), f))
    return tuple(out)


def sample_poly(coeffs, poly: Polynomial, basis: HarmonicBasis, M: int) -> np.ndarray:
    grid = build_grid(basis, M)
    c = _as_coeff_array(coeffs, basis)
    if c.ndim == 1:
        c = c[None, :]
    x = eval_series(c, basis, grid.nodes)
    return eval_poly(poly, x, grid.nodes, basis.omega)


def conditional_identity_gap(coeffs, poly: Polynomial, basis: HarmonicBasis, M: int,
                             degree_phi: int | None = None) -> float:
    """``|| E_plus f(E x) - h ||_inf``: zero whenever ``M > (phi + 1) N``."""
    phi = max(poly_degree(poly) if degree_phi is None else degree_phi, 1)
    ops = build_operators(basis, build_grid(basis, M), phi)
    h, _ = exact_poly_harmonics(coeffs, poly, basis, phi)
    projected = ops.E_plus @ sample_poly(coeffs, poly, basis, M)
    return float(np.max(np.abs(projected - h)))


def alias_decomposition_error(coeffs, poly: Polynomial, basis: HarmonicBasis, M: int,
                              degree_phi: int | None = None) -> float:
    """``|| E_plus f(E x) - (h + E_alias h_high) ||_inf``, zero for every ``M >= 2N+1``."""
    phi = max(poly_degree(poly) if degree_phi is None else degree_phi, 1)
    ops = build_operators(basis, build_grid(basis, M), phi)
    h, h_high = exact_poly_harmonics(coeffs, poly, basis, phi)
    projected = ops.E_plus @ sample_poly(coeffs, poly, basis, M)
    return float(np.max(np.abs(projected - h - ops.E_alias @ h_high)))
