"""Reference time integration used to adjudicate harmonic balance solutions.

The integrator is Dormand-Prince 5(4) with a PI step-size controller and
the free fourth-order continuous extension for dense output.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .spectral import HarmonicBasis, build_grid, build_operators, eval_series, eval_series_derivative
from .systems import SystemDef, effective_potential

_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_E = _B - np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
# continuous extension: y(t0 + s h) = y0 + h K^T (P @ [s, s^2, s^3, s^4])
_P = np.array([
    [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0, 0, 0, 0],
    [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])


class StiffnessError(RuntimeError):
    """Step size collapsed below ``1e-15`` of the integration span."""


@dataclass
class Trajectory:
    t: np.ndarray
    y: np.ndarray
    stages: np.ndarray = field(repr=False)

    def __call__(self, tq) -> np.ndarray:
        """Dense output at `tq`; shape ``(d,) + np.shape(tq)``."""
        tq = np.asarray(tq, dtype=float)
        flat = tq.ravel()
        lo, hi = min(self.t[0], self.t[-1]), max(self.t[0], self.t[-1])
        if np.any(flat < lo - 1e-12 * abs(hi - lo)) or np.any(flat > hi + 1e-12 * abs(hi - lo)):
            raise ValueError("dense output requested outside the integrated span")
        sign = np.sign(self.t[-1] - self.t[0]) or 1.0
        idx = np.searchsorted(sign * self.t, sign * flat, side="right") - 1
        idx = np.clip(idx, 0, len(self.t) - 2)
        h = self.t[idx + 1] - self.t[idx]
        s = (flat - self.t[idx]) / h
        Q = np.stack([s, s**2, s**3, s**4])  # (4, q)
        w = _P @ Q  # (7, q)
        K = self.stages[idx]  # (q, 7, d)
        out = self.y[:, idx] + h * np.einsum("sq,qsd->dq", w, K)
        return out.reshape((self.y.shape[0],) + tq.shape)

    @property
    def final(self) -> np.ndarray:
        return self.y[:, -1]


def propagate(sys: SystemDef, x0, t_span, tol: float = 1e-10, omega: float = 1.0,
              h0: float | None = None, max_steps: int = 2_000_000, hmax: float | None = None) -> Trajectory:
    """Integrate ``x' = f(x, t)`` over `t_span` with a local error bound `tol`.

    Raises
    ------
    StiffnessError
        If the step size underflows.
    """
    if not 1e-14 <= tol <= 1e-3:
        raise ValueError(f"tol must lie in [1e-14, 1e-3], got {tol}")
    t0, t1 = map(float, t_span)
    span = t1 - t0
    y = np.asarray(x0, dtype=float).copy()
    d = y.size
    direction = 1.0 if span >= 0 else -1.0
    f = lambda t, x: sys.field(x, t, omega)  # noqa: E731
    k1 = f(t0, y)
    ts, ys, ks = [t0], [y.copy()], []
    if span == 0:
        return Trajectory(np.array(ts), np.array(ys).T, np.zeros((0, 7, d)))
    hmax = abs(span) if hmax is None else hmax
    if h0 is None:
        scale = tol * (1.0 + np.abs(y))
        d0, d1 = np.sqrt(np.mean((y / scale) ** 2)), np.sqrt(np.mean((k1 / scale) ** 2))
        h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
        h0 = min(h0, abs(span))
    h = abs(h0)
    t = t0
    err_old = 1e-4
    K = np.empty((7, d))
    beta = 0.04
    expo = 0.2 - 0.75 * beta
    for _ in range(max_steps):
        if direction * (t1 - t) <= 0:
            break
        if h < 1e-15 * abs(span):
            raise StiffnessError(f"step size {h:.3e} underflow at t={t:.6g}")
        last = h >= abs(t1 - t)
        hs = abs(t1 - t) if last else h
        hd = direction * hs
        K[0] = k1
        for s in range(1, 7):
            ys_ = y + hd * np.dot(_A[s], K[:s])
            K[s] = f(t + _C[s] * hd, ys_)
        y_new = ys_  # stage 7 argument is the 5th-order solution
        err_vec = hd * (_E @ K)
        scale = tol * (1.0 + np.maximum(np.abs(y), np.abs(y_new)))
        err = np.sqrt(np.mean((err_vec / scale) ** 2))
        if not np.isfinite(err):
            h *= 0.2
            continue
        if err <= 1.0:
            t = t1 if last else t + hd
            y = y_new
            k1 = K[6].copy()
            ts.append(t)
            ys.append(y.copy())
            ks.append(K.copy())
            fac = 0.9 * max(err, 1e-10) ** (-expo) * err_old**beta
            h = min(hmax, hs * min(5.0, max(0.2, fac)))
            err_old = max(err, 1e-4)
        else:
            h = hs * max(0.2, 0.9 * err ** (-expo))
    else:
        raise RuntimeError("maximum number of steps exceeded")
    return Trajectory(np.array(ts), np.array(ys).T, np.array(ks))


def export_csv(traj: Trajectory, path, labels=None, header: str = "", samples=None) -> None:
    """Write ``t, state...`` rows; dense-samples `samples` points if given."""
    if samples:
        t = np.linspace(traj.t[0], traj.t[-1], samples)
        y = traj(t)
    else:
        t, y = traj.t, traj.y
    labels = list(labels) if labels else [f"x{i}" for i in range(y.shape[0])]
    with open(path, "w", newline="") as fh:
        for line in header.splitlines():
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + labels)
        for i in range(t.size):
            w.writerow([f"{t[i]:.17g}"] + [f"{v:.17g}" for v in y[:, i]])


# ---------------------------------------------------------------------------
# verification


@dataclass
class PeriodicityMetrics:
    """How well a Fourier solution matches the true flow.

    Attributes
    ----------
    period_return_error : float
        ``|x(T) - x(0)| / max(1, |x(0)|)`` after propagating ``x(0)``.
    defect_rms : float
        RMS over dense samples of ``|x'_series - f(x_series, t)|``.
    field_scale : float
        RMS of ``|f(x_series, t)|`` over the same samples.
    max_state_error_vs_reference : float or None
    shooting_distance : float or None
        Largest gap between the series and the nearest exactly periodic
        orbit found by shooting, relative to ``max(1, max |x|)``; ``inf``
        when shooting fails.
    """

    period_return_error: float
    defect_rms: float
    field_scale: float
    max_state_error_vs_reference: float | None = None
    shooting_distance: float | None = None

    @property
    def relative_defect(self) -> float:
        return self.defect_rms / max(self.field_scale, 1e-300)


def series_defect(sys: SystemDef, coeffs, basis: HarmonicBasis, samples: int = 1024):
    """RMS ODE defect of the Fourier solution and RMS field magnitude."""
    t = np.arange(samples) * basis.period / samples
    x = eval_series(coeffs, basis, t)
    dx = eval_series_derivative(coeffs, basis, t)
    fx = sys.field(x, t, basis.omega)
    defect = np.sqrt(np.mean(np.sum((dx - fx) ** 2, axis=0)))
    scale = np.sqrt(np.mean(np.sum(fx**2, axis=0)))
    return float(defect), float(scale)


def shoot_periodic(sys: SystemDef, x0, period: float, omega: float = 1.0, tol: float = 1e-12,
                   max_iter: int = 30, xtol: float = 1e-10):
    """Correct `x0` to a fixed point of the period map by Newton shooting.

    The monodromy is built by central differences of the flow; steps are
    least-squares solutions so the phase degeneracy of autonomous orbits does
    no harm. Returns the converged trajectory over one period, or ``None``.
    """
    x = np.asarray(x0, dtype=float).copy()
    n = x.size

    def gap(v):
        return propagate(sys, v, (0.0, period), tol=tol, omega=omega).final - v

    try:
        with np.errstate(all="raise"):
            g = gap(x)
            for _ in range(max_iter):
                scale = max(1.0, float(np.max(np.abs(x))))
                if np.max(np.abs(g)) < xtol * scale:
                    return propagate(sys, x, (0.0, period), tol=tol, omega=omega)
                h = 1e-6 * scale
                J = np.empty((n, n))
                for j in range(n):
                    e = np.zeros(n)
                    e[j] = h
                    J[:, j] = (gap(x + e) - gap(x - e)) / (2 * h)
                dx, *_ = np.linalg.lstsq(J, -g, rcond=1e-12)
                lam = 1.0
                for _ in range(10):
                    gt = gap(x + lam * dx)
                    if np.linalg.norm(gt) < np.linalg.norm(g):
                        break
                    lam *= 0.5
                else:
                    return None
                x, g = x + lam * dx, gt
    except (StiffnessError, RuntimeError, FloatingPointError, ZeroDivisionError):
        return None
    return None


def verify_periodicity(sys: SystemDef, coeffs, basis: HarmonicBasis, tol: float = 1e-12,
                       reference=None, samples: int = 1024, shoot: bool = False) -> PeriodicityMetrics:
    """Compare a Fourier solution with direct propagation over one period.

    `reference`, when given, is a callable ``t -> state`` (for instance a
    converged `Trajectory`) evaluated on ``[0, T)``. With `shoot`, the
    initial state is also corrected to an exact periodic orbit and the
    distance between that orbit and the series is reported.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    try:
        defect, scale = series_defect(sys, coeffs, basis, samples)
    except (FloatingPointError, ZeroDivisionError, ValueError):
        return PeriodicityMetrics(np.inf, np.inf, np.nan)
    x0 = eval_series(coeffs, basis, 0.0)
    try:
        with np.errstate(all="raise"):
            traj = propagate(sys, x0, (0.0, basis.period), tol=tol, omega=basis.omega)
        ret = float(np.linalg.norm(traj.final - x0) / max(1.0, np.linalg.norm(x0)))
    except (StiffnessError, RuntimeError, FloatingPointError, ZeroDivisionError):
        ret = np.inf
    ref_err = None
    if reference is not None:
        t = np.arange(samples) * basis.period / samples
        ref_err = float(np.max(np.abs(eval_series(coeffs, basis, t) - reference(t))))
    if not np.isfinite(defect):
        defect = np.inf
    shot = None
    if shoot:
        shot = np.inf
        orbit = shoot_periodic(sys, x0, basis.period, basis.omega, tol=tol) if np.isfinite(ret) else None
        if orbit is not None:
            t = np.arange(samples) * basis.period / samples
            xs = eval_series(coeffs, basis, t)
            shot = float(np.max(np.abs(xs - orbit(t))) / max(1.0, float(np.max(np.abs(xs)))))
    return PeriodicityMetrics(ret, defect, scale, ref_err, shot)


def settle_and_project(sys: SystemDef, x0, basis: HarmonicBasis, settle_periods: int = 50,
                       tol: float = 1e-11, M: int | None = None) -> np.ndarray:
    """Fourier coefficients of the orbit reached after `settle_periods` periods.

    Integrates a forced system to steady state, then projects one further
    period sampled at ``M`` equispaced nodes (default ``8N + 1``).
    """
    T = basis.period
    traj = propagate(sys, x0, (0.0, settle_periods * T), tol=tol, omega=basis.omega)
    M = M or 8 * basis.order + 1
    ops = build_operators(basis, build_grid(basis, M), 1)
    last = propagate(sys, traj.final, (settle_periods * T, (settle_periods + 1) * T), tol=tol,
                     omega=basis.omega)
    samples = last(settle_periods * T + ops.grid.nodes)
    return samples @ ops.E_plus.T


# ---------------------------------------------------------------------------
# CRTBP


def jacobi_constant(state, mu: float):
    """``C = 2 U - |v|^2`` for physical states (component axis first)."""
    s = np.asarray(state, dtype=float)
    return 2.0 * effective_potential(s[:3], mu) - np.sum(s[3:6] ** 2, axis=0)


@dataclass
class OrbitKeepingReport:
    periods_maintained: float
    section_crossings: int
    drift_per_period: list[float]
    start_state: np.ndarray = field(repr=False)


def _shift_to_section(coeffs, basis: HarmonicBasis, samples: int = 4096):
    """Time of the first downward-free ``y = 0`` crossing and its direction."""
    t = np.arange(samples + 1) * basis.period / samples
    y = eval_series(coeffs[1], basis, t)
    sign_change = np.nonzero(np.sign(y[:-1]) != np.sign(y[1:]))[0]
    if sign_change.size == 0:
        return 0.0, 0.0
    i = sign_change[0]
    lo, hi = t[i], t[i + 1]
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if np.sign(eval_series(coeffs[1], basis, mid)) == np.sign(y[i]):
            lo = mid
        else:
            hi = mid
    tc = 0.5 * (lo + hi)
    return tc, float(np.sign(eval_series_derivative(coeffs[1], basis, tc)))


def orbit_keeping(sys: SystemDef, coeffs, basis: HarmonicBasis, max_periods: int = 10,
                  drift_threshold: float = 0.05, section_radius: float = 0.05,
                  perturbation=None, tol: float = 1e-12, curve_samples: int = 4096) -> OrbitKeepingReport:
    """Count how many periods an uncontrolled propagation stays on the orbit.

    The propagation starts where the Fourier orbit crosses the ``y = 0``
    plane. Crossings of that plane in the same direction and within
    `section_radius` of the start are counted until the distance to the
    nominal orbit curve first exceeds `drift_threshold`.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    T = basis.period
    tc, direction = _shift_to_section(coeffs, basis)
    x0 = eval_series(coeffs, basis, tc)
    if perturbation is not None:
        x0 = x0 + np.asarray(perturbation, dtype=float)
    curve = eval_series(coeffs[:3], basis, tc + np.arange(curve_samples) * T / curve_samples)
    p0 = x0[:3]

    def distance(pos):
        diff = pos[:, :, None] - curve[:, None, :]
        return np.sqrt(np.min(np.sum(diff**2, axis=0), axis=1))

    drifts: list[float] = []
    crossings = 0
    maintained = float(max_periods)
    state = x0
    t_start = 0.0
    for k in range(max_periods):
        try:
            traj = propagate(sys, state, (t_start, t_start + T), tol=tol, omega=basis.omega)
        except (StiffnessError, RuntimeError):
            maintained = float(k)
            break
        tt = np.linspace(t_start, t_start + T, 513)
        pos = traj(tt)[:3]
        dist = distance(pos)
        drifts.append(float(dist.max()))
        over = np.nonzero(dist > drift_threshold)[0]
        limit = tt[over[0]] if over.size else np.inf
        y = traj.y[1]
        for i in np.nonzero(np.sign(y[:-1]) != np.sign(y[1:]))[0]:
            if direction and np.sign(y[i + 1] - y[i]) != direction:
                continue
            lo, hi = traj.t[i], traj.t[i + 1]
            for _ in range(50):
                mid = 0.5 * (lo + hi)
                if np.sign(traj(mid)[1]) == np.sign(y[i]):
                    lo = mid
                else:
                    hi = mid
            tx = 0.5 * (lo + hi)
            # the start itself lies on the section
            if tx > limit or tx < 0.5 * T:
                continue
            if np.linalg.norm(traj(tx)[:3] - p0) <= section_radius:
                crossings += 1
        if over.size:
            maintained = float(tt[over[0]] / T)
            break
        state = traj.final
        t_start += T
    return OrbitKeepingReport(maintained, crossings, drifts, x0)
