"""Newton iteration, Monte-Carlo multistart and frequency sweeping."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .assembly import MethodConfig, NonFiniteResidual, ResidualSystem, jacobian
from .integrate import PeriodicityMetrics, verify_periodicity
from .spectral import HarmonicBasis, eval_series

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class NewtonOptions:
    tol_residual: float = 1e-12
    max_iter: int = 100
    max_halvings: int = 20

    def __post_init__(self):
        if not self.tol_residual > 0:
            raise ValueError("tol_residual must be positive")


@dataclass(frozen=True)
class PhysicalityCriteria:
    """Thresholds deciding whether a root is a genuine periodic orbit.

    A root is physical when its one-period return error and relative ODE
    defect are both small, or, failing that, when shooting from its initial
    state reaches an exactly periodic orbit no farther than `shooting_tol`
    (relative) from the series. The second route accepts low-order
    truncations of real orbits whose return error is dominated by the
    missing harmonics. Shooting is only attempted for relative defects below
    `shooting_gate`; grossly wrong roots are rejected without it.
    """

    return_tol: float = 1e-3
    defect_tol: float = 1e-2
    integration_tol: float = 1e-12
    shooting_tol: float | None = 0.05
    shooting_gate: float = 0.1

    def direct_pass(self, m: PeriodicityMetrics) -> bool:
        return bool(m.period_return_error < self.return_tol
                    and m.defect_rms < self.defect_tol * m.field_scale)

    def classify(self, m: PeriodicityMetrics) -> str:
        ok = self.direct_pass(m)
        if not ok and self.shooting_tol is not None and m.shooting_distance is not None:
            ok = m.shooting_distance < self.shooting_tol
        return "physical" if ok else "non_physical"


@dataclass
class SolveReport:
    converged: bool
    z: np.ndarray
    coeffs: np.ndarray
    residual_history: list[float]
    iterations: int
    eps: float = 0.0
    verification: PeriodicityMetrics | None = None
    classification: str = "unverified"
    message: str = ""

    @property
    def residual(self) -> float:
        return self.residual_history[-1] if self.residual_history else np.inf


def _linear_step(J, r):
    try:
        dz = np.linalg.solve(J, -r)
        if np.all(np.isfinite(dz)):
            return dz
    except np.linalg.LinAlgError:
        pass
    dz, *_ = np.linalg.lstsq(J, -r, rcond=None)
    return dz


def newton_solve(res: ResidualSystem, x0, opt: NewtonOptions = NewtonOptions()) -> SolveReport:
    """Damped Newton on ``res(z) = 0``.

    `x0` is either a packed unknown vector or a full ``(d, 2N+1)`` coefficient
    array. A step is halved up to ``opt.max_halvings`` times until the
    infinity norm of the residual decreases, so the recorded history never
    increases.
    """
    x0 = np.asarray(x0, dtype=float)
    z = x0.copy() if x0.ndim == 1 and x0.size == res.n_unknowns else res.pack(x0)
    with np.errstate(all="ignore"):
        r = res(z)
    norm = float(np.max(np.abs(r))) if np.all(np.isfinite(r)) else np.inf
    history = [norm]
    message = ""
    it = 0
    if not np.isfinite(norm):
        message = "residual not finite at the initial point"
    while np.isfinite(norm) and norm > opt.tol_residual and it < opt.max_iter:
        it += 1
        try:
            with np.errstate(all="ignore"):
                J = jacobian(res, z)
        except NonFiniteResidual:
            message = "non-finite residual in Jacobian"
            break
        dz = _linear_step(J, r)
        lam = 1.0
        accepted = False
        for _ in range(opt.max_halvings + 1):
            trial = z + lam * dz
            with np.errstate(all="ignore"):
                rt = res(trial)
            nt = float(np.max(np.abs(rt))) if np.all(np.isfinite(rt)) else np.inf
            if nt < norm:
                accepted = True
                break
            lam *= 0.5
        if not accepted:
            message = "no decrease along the Newton direction"
            break
        z, r, norm = trial, rt, nt
        history.append(norm)
    converged = bool(norm <= opt.tol_residual)
    if not converged and not message:
        message = "iteration limit reached" if it >= opt.max_iter else "stalled"
    coeffs, eps = res.unpack(z)
    return SolveReport(converged, z, coeffs, history, it, float(eps), message=message)


def verify_report(res: ResidualSystem, report: SolveReport,
                  criteria: PhysicalityCriteria = PhysicalityCriteria()) -> SolveReport:
    """Attach integration metrics and a physical/non-physical label.

    Recast systems are checked on their physical substate against the
    original field.
    """
    sys_def, coeffs = res.system, report.coeffs
    if sys_def.original is not None:
        sys_def, coeffs = sys_def.original, coeffs[: sys_def.original.dim]
    metrics = verify_periodicity(sys_def, coeffs, res.basis, tol=criteria.integration_tol)
    if (not criteria.direct_pass(metrics) and criteria.shooting_tol is not None
            and metrics.relative_defect < criteria.shooting_gate):
        metrics = verify_periodicity(sys_def, coeffs, res.basis, tol=criteria.integration_tol, shoot=True)
    report.verification = metrics
    report.classification = criteria.classify(metrics)
    return report


# ---------------------------------------------------------------------------
# multistart


@dataclass
class Cluster:
    report: SolveReport
    hits: int
    trials: list[int] = field(default_factory=list)


@dataclass
class MultistartResult:
    clusters: list[Cluster]
    trials: int
    converged: int

    @property
    def physical_fraction(self) -> float:
        good = sum(c.hits for c in self.clusters if c.report.classification == "physical")
        return good / self.trials if self.trials else 0.0


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    """Independent generator for one trial: depends only on ``(seed, trial)``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(trial)]))


def _same(a, b, rtol):
    return np.max(np.abs(a - b)) < rtol * max(1.0, np.max(np.abs(a)))


def multistart(res: ResidualSystem, bounds, trials: int, seed: int = 0,
               opt: NewtonOptions = NewtonOptions(), cluster_tol: float = 1e-6,
               criteria: PhysicalityCriteria | None = PhysicalityCriteria(),
               workers: int = 1) -> MultistartResult:
    """Solve from `trials` uniform random starting points and cluster the roots.

    Parameters
    ----------
    bounds : (lo, hi) or (n, 2) array_like
        Sampling box for the packed unknowns.
    criteria : PhysicalityCriteria or None
        Verification thresholds; ``None`` skips classification.
    workers : int
        Threads used for the trials. Results do not depend on it.
    """
    if trials < 1:
        raise ValueError("need at least one trial")
    n = res.n_unknowns
    b = np.asarray(bounds, dtype=float)
    lo, hi = (np.full(n, b[0]), np.full(n, b[1])) if b.ndim == 1 else (b[:, 0], b[:, 1])

    def run(k):
        z0 = trial_rng(seed, k).uniform(lo, hi)
        return k, newton_solve(res, z0, opt)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(run, range(trials)))
    else:
        results = [run(k) for k in range(trials)]
    results.sort(key=lambda kr: kr[0])

    clusters: list[Cluster] = []
    converged = 0
    for k, rep in results:
        if not rep.converged:
            continue
        converged += 1
        for c in clusters:
            if _same(c.report.z, rep.z, cluster_tol):
                c.hits += 1
                c.trials.append(k)
                break
        else:
            clusters.append(Cluster(rep, 1, [k]))
    if criteria is not None:
        for c in clusters:
            verify_report(res, c.report, criteria)
    clusters.sort(key=lambda c: tuple(np.round(c.report.z, 9)))
    return MultistartResult(clusters, trials, converged)


# ---------------------------------------------------------------------------
# frequency sweeping


@dataclass
class BranchPoint:
    omega: float
    coeffs: np.ndarray
    amplitude: np.ndarray
    residual: float = 0.0
    eps: float = 0.0


def peak_amplitude(coeffs, basis: HarmonicBasis, center=None, samples: int = 1024) -> np.ndarray:
    """``max_t |x_k(t) - center_k|`` for every state component."""
    t = np.arange(samples) * basis.period / samples
    x = eval_series(coeffs, basis, t)
    c = np.zeros(x.shape[0]) if center is None else np.asarray(center, dtype=float)
    return np.max(np.abs(x - c[:, None]), axis=1)


def _residual_at(res_factory, omega, cache):
    key = round(float(omega), 14)
    if key not in cache:
        cache[key] = res_factory(float(omega))
    return cache[key]


def continue_branch(res_factory, omega0, z0, omega_end, step, opt=NewtonOptions(),
                    max_halvings=4, jump_tol=0.25, center=None, cache=None,
                    amp_floor=1e-6, min_amplitude=0.0) -> list[BranchPoint]:
    """Natural-parameter continuation from a converged point towards `omega_end`.

    The predictor is a secant through the last two points. A step is retried
    with half the increment when Newton fails or when any component's peak
    amplitude jumps by more than `jump_tol` of its previous value. The
    increment never drops below ``step / 2**max_halvings``; failing there ends
    the branch (a fold or a junction). A branch also ends when every peak
    amplitude falls below `min_amplitude`, i.e. the orbit has shrunk onto
    the centre point.
    """
    cache = {} if cache is None else cache
    direction = np.sign(omega_end - omega0)
    pts: list[BranchPoint] = []
    if direction == 0:
        return pts
    res = _residual_at(res_factory, omega0, cache)
    zs, ws = [np.asarray(z0, dtype=float)], [float(omega0)]
    amp_prev = peak_amplitude(res.coefficients(z0), res.basis, center)
    h_min = step / 2**max_halvings
    h = step
    omega = omega0
    scale_floor = amp_floor * max(1.0, float(amp_prev.max()))
    while direction * (omega_end - omega) > 1e-12:
        ok = False
        while True:
            w = omega + direction * min(h, abs(omega_end - omega))
            if len(zs) >= 2:
                pred = zs[-1] + (zs[-1] - zs[-2]) * (w - ws[-1]) / (ws[-1] - ws[-2])
            else:
                pred = zs[-1]
            res = _residual_at(res_factory, w, cache)
            rep = newton_solve(res, pred, opt)
            if rep.converged:
                amp = peak_amplitude(rep.coeffs, res.basis, center)
                jump = np.abs(amp - amp_prev) > jump_tol * np.maximum(amp_prev, scale_floor)
                if not jump.any():
                    ok = True
                    break
            if h <= h_min * (1 + 1e-9):
                break
            h = max(0.5 * h, h_min)
        if not ok or float(amp.max()) < min_amplitude:
            break
        omega = w
        zs.append(rep.z)
        ws.append(w)
        amp_prev = amp
        pts.append(BranchPoint(w, rep.coeffs, amp, rep.residual, rep.eps))
        h = min(step, 2.0 * h)
    return pts


def _on_branch(p: BranchPoint, branch, tol):
    """Whether `p` lies on `branch` (amplitudes interpolated in frequency)."""
    w = np.array([q.omega for q in branch])
    if not w.min() - 1e-12 <= p.omega <= w.max() + 1e-12:
        return False
    A = np.array([q.amplitude for q in branch])
    interp = np.array([np.interp(p.omega, w, A[:, k]) for k in range(A.shape[1])])
    return bool(np.max(np.abs(interp - p.amplitude)) < tol * max(1.0, float(A.max())))


def frequency_sweep(res_factory, omega_range, step, seeds, opt: NewtonOptions = NewtonOptions(),
                    center=None, max_halvings: int = 4, jump_tol: float = 0.25,
                    dedup_tol: float = 1e-6, min_amplitude: float = 0.0,
                    seed_tol: float = 1e-3) -> list[list[BranchPoint]]:
    """Trace amplitude-frequency branches from a list of seeds.

    Parameters
    ----------
    res_factory : callable
        ``omega -> ResidualSystem``.
    omega_range : (lo, hi)
    step : float
        Nominal frequency increment.
    seeds : sequence of (omega, coefficients)
        Starting guesses; each is solved at its own frequency and continued
        both upwards and downwards.
    center : array_like, optional
        Reference point subtracted before taking peak amplitudes.
    min_amplitude : float
        Branches stop once all peak amplitudes drop below this.
    seed_tol : float
        A converged seed lying on an already traced branch (relative
        amplitude gap below this) is not traced again.

    Returns
    -------
    list of branches sorted by frequency, duplicates removed. Seeds that never
    converge give no branch.
    """
    lo, hi = map(float, omega_range)
    if not lo < hi:
        raise ValueError("omega_range must be increasing")
    if step <= 0:
        raise ValueError("step must be positive")
    cache: dict = {}
    branches: list[list[BranchPoint]] = []
    for omega_s, guess in seeds:
        res = _residual_at(res_factory, omega_s, cache)
        rep = newton_solve(res, guess, opt)
        if not rep.converged:
            log.info("seed at omega=%.6g did not converge (residual %.3e)", omega_s, rep.residual)
            continue
        first = BranchPoint(float(omega_s), rep.coeffs,
                            peak_amplitude(rep.coeffs, res.basis, center), rep.residual, rep.eps)
        if float(first.amplitude.max()) < min_amplitude or any(_on_branch(first, b, seed_tol) for b in branches):
            continue
        kw = dict(opt=opt, max_halvings=max_halvings, jump_tol=jump_tol, center=center, cache=cache,
                  min_amplitude=min_amplitude)
        up = continue_branch(res_factory, omega_s, rep.z, hi, step, **kw)
        down = continue_branch(res_factory, omega_s, rep.z, lo, step, **kw)
        branch = sorted(down + [first] + up, key=lambda p: p.omega)
        branches.append(branch)
    return dedup_branches(branches, dedup_tol)


def _amp_match(p: BranchPoint, q: BranchPoint, tol):
    return (abs(p.omega - q.omega) < 1e-12
            and np.max(np.abs(p.amplitude - q.amplitude)) < tol * max(1.0, float(np.max(p.amplitude))))


def dedup_branches(branches, tol=1e-6):
    """Merge branches sharing any point (same frequency and peak amplitudes)."""
    merged: list[list[BranchPoint]] = []
    for br in branches:
        for m in merged:
            if any(_amp_match(p, q, tol) for p in br for q in m):
                extra = [p for p in br if not any(_amp_match(p, q, tol) for q in m)]
                m.extend(extra)
                m.sort(key=lambda p: p.omega)
                break
        else:
            merged.append(list(br))
    return merged


def branch_junctions(branches, tol: float = 1e-2, coords=None):
    """Frequencies where two branches meet in amplitude space.

    For every pair with overlapping frequency ranges the amplitude vectors
    (restricted to `coords`) are interpolated onto the union of their
    frequencies; pairs whose closest approach is below `tol` (relative to the
    amplitude scale) are reported as ``(i, j, omega, distance)``.
    """
    out = []
    for i in range(len(branches)):
        for j in range(i + 1, len(branches)):
            a, b = branches[i], branches[j]
            wa = np.array([p.omega for p in a])
            wb = np.array([p.omega for p in b])
            lo, hi = max(wa.min(), wb.min()), min(wa.max(), wb.max())
            if lo > hi:
                # allow a branch ending within one step of the other
                gap = min(abs(wa.min() - wb.max()), abs(wb.min() - wa.max()))
                if gap > 0.05:
                    continue
                lo = hi = wa.min() if abs(wa.min() - wb.max()) < abs(wb.min() - wa.max()) else wa.max()
            Aa = np.array([p.amplitude for p in a])
            Ab = np.array([p.amplitude for p in b])
            if coords is not None:
                Aa, Ab = Aa[:, coords], Ab[:, coords]
            grid = np.unique(np.concatenate([wa, wb]))
            grid = grid[(grid >= lo) & (grid <= hi)] if hi > lo else np.array([lo])
            ia = np.stack([np.interp(grid, wa, Aa[:, k]) for k in range(Aa.shape[1])], axis=1)
            ib = np.stack([np.interp(grid, wb, Ab[:, k]) for k in range(Ab.shape[1])], axis=1)
            dist = np.max(np.abs(ia - ib), axis=1)
            scale = max(1e-12, float(max(Aa.max(), Ab.max())))
            k = int(np.argmin(dist))
            if dist[k] < tol * scale:
                out.append((i, j, float(grid[k]), float(dist[k])))
    return out


def solve_config(res: ResidualSystem, x0, opt: NewtonOptions = NewtonOptions(),
                 criteria: PhysicalityCriteria | None = PhysicalityCriteria()) -> SolveReport:
    rep = newton_solve(res, x0, opt)
    if criteria is not None and rep.converged:
        verify_report(res, rep, criteria)
    return rep


def seed_ladder(res: ResidualSystem, make_guess, amplitudes, opt: NewtonOptions = NewtonOptions(),
                center=None, min_amplitude: float = 0.0) -> SolveReport | None:
    """Try guesses of increasing amplitude until Newton lands on a non-trivial orbit.

    `make_guess(a)` returns initial coefficients for amplitude `a`. Roots whose
    peak amplitudes all stay below `min_amplitude` (the centre point itself)
    are skipped.
    """
    for a in amplitudes:
        rep = newton_solve(res, make_guess(a), opt)
        if rep.converged and peak_amplitude(rep.coeffs, res.basis, center).max() >= min_amplitude:
            return rep
    return None
