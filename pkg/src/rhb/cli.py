"""Command line front end.

Every command reads an INI file (``--config``) and writes CSV or plain
key-value reports into ``--out``. Each output file starts with ``#`` lines
holding the fully resolved configuration, so a run can be repeated from
its own output.

Exit codes: 0 success, 1 configuration error, 2 numerical non-convergence,
3 internal error.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import logging
import os
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .assembly import MethodConfig, PhaseAnchor, build_hb_residual, build_time_domain_residual
from .integrate import export_csv, orbit_keeping, propagate, settle_and_project
from .solvers import (
    NewtonOptions,
    PhysicalityCriteria,
    branch_junctions,
    frequency_sweep,
    multistart,
    newton_solve,
    peak_amplitude,
    solve_config,
)
from .spectral import (
    HarmonicBasis,
    alias_decomposition_error,
    build_grid,
    build_operators,
    conditional_identity_gap,
    poly_harmonics_full,
    predict_alias_entries,
    random_polynomial,
)
from .systems import (
    CRTBP_ANCHOR,
    CRTBP_FAMILIES,
    CRTBPParams,
    DuffingParams,
    RayleighPlessetParams,
    crtbp_recast,
    crtbp_seed,
    crtbp_system,
    duffing_system,
    linear_oscillator,
    rayleigh_plesset_recast,
    rayleigh_plesset_system,
)

log = logging.getLogger("rhb")

ENV_THREADS = "RHB_THREADS"
EXIT_OK, EXIT_CONFIG, EXIT_NONCONVERGED, EXIT_INTERNAL = 0, 1, 2, 3


class ConfigError(Exception):
    pass


# ---------------------------------------------------------------------------
# configuration schema

_REQUIRED = object()


def _floats(text):
    return [float(v) for v in re.split(r"[,\s]+", text.strip()) if v]


def _ints(text):
    return [int(v) for v in re.split(r"[,\s]+", text.strip()) if v]


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _opt(kind):
    def parse(text):
        return None if text.strip().lower() in ("", "none") else kind(text)

    parse.__name__ = f"optional {kind.__name__}"
    return parse


SCHEMA = {
    "system": {
        "name": (str, _REQUIRED),
        "c": (float, None), "k": (float, None), "alpha": (_floats, None), "phi": (_ints, None),
        "F": (float, None),
        "A": (float, None), "B": (float, None), "C": (float, None), "D": (float, None),
        "E": (float, None),
        "mu": (float, None), "point": (str, None),
    },
    "method": {
        "mode": (str, "RHB"), "order": (int, _REQUIRED), "omega": (float, None),
        "M": (_opt(int), None), "anchor": (_opt(int), None), "closure": (str, "unfold"),
        "formulation": (str, "time"),
    },
    "newton": {"tol": (float, 1e-12), "max_iter": (int, 100), "max_halvings": (int, 20)},
    "initial": {
        "kind": (str, "zeros"), "values": (_floats, None), "state": (_floats, None),
        "settle_periods": (int, 50), "family": (str, None), "amplitude": (_floats, None),
    },
    "physicality": {
        "return_tol": (float, 1e-3), "defect_tol": (float, 1e-2), "integration_tol": (float, 1e-12),
        "shooting_tol": (_opt(float), 0.05),
    },
    "sweep": {
        "omega_min": (float, _REQUIRED), "omega_max": (float, _REQUIRED), "step": (float, _REQUIRED),
        "seed_omegas": (_floats, None), "seed_multistart": (_opt(float), None),
        "multistart_trials": (int, 200), "multistart_bounds": (_floats, "-2, 2"),
        "families": (str, None), "jump_tol": (float, 0.25), "min_amplitude": (float, 0.0),
        "junction_tol": (float, 0.01),
    },
    "montecarlo": {
        "trials": (int, 1000), "bounds": (_floats, "-2, 2"), "cluster_tol": (float, 1e-6),
        "seed": (int, 0),
    },
    "aliasing": {"N": (int, _REQUIRED), "phi": (int, _REQUIRED), "M_min": (_opt(int), None),
                 "M_max": (_opt(int), None)},
    "identity": {"N": (int, _REQUIRED), "phi": (int, _REQUIRED), "cases": (int, 200),
                 "M": (_opt(int), None), "seed": (int, 0), "dim": (int, 1)},
    "propagate": {
        "periods": (float, 1.0), "tol": (float, 1e-12), "samples": (int, 1025),
        "keeping": (_bool, None), "max_periods": (int, 10), "drift_threshold": (float, 0.05),
        "section_radius": (float, 0.05),
    },
}

COMMANDS = {
    "solve": ("system", "method", "newton", "initial", "physicality"),
    "sweep": ("system", "method", "newton", "initial", "sweep"),
    "montecarlo": ("system", "method", "newton", "montecarlo", "physicality"),
    "aliasing": ("aliasing",),
    "identity-check": ("identity",),
    "propagate": ("system", "method", "newton", "initial", "physicality", "propagate"),
}

REQUIRED_SECTIONS = {
    "solve": ("system", "method"),
    "sweep": ("system", "method", "sweep"),
    "montecarlo": ("system", "method"),
    "aliasing": ("aliasing",),
    "identity-check": ("identity",),
    "propagate": ("system", "method"),
}


@dataclass
class RunConfig:
    command: str
    values: dict
    text: str  # resolved configuration, INI
    source: str = "<defaults>"
    lines: list = field(default_factory=list)

    def __getitem__(self, section):
        return self.values.get(section, {})

    def at(self, section: str, key: str | None = None) -> str:
        """``file:line:`` prefix for messages about ``[section] key``."""
        line = _line_of(self.lines, section, key)
        if line == 0 and key is not None:
            line = _line_of(self.lines, section, None)
        return f"{self.source}:{line}:"


def _line_of(raw_lines, section, key):
    current = None
    for i, line in enumerate(raw_lines, 1):
        m = re.match(r"\s*\[([^\]]+)\]", line)
        if m:
            current = m.group(1).strip()
            continue
        if current == section and key is not None and re.match(rf"\s*{re.escape(key)}\s*[=:]", line):
            return i
        if current == section and key is None:
            return i - 1
    return 0


def load_config(command: str, path, overrides: dict | None = None) -> RunConfig:
    """Parse, validate and resolve a run configuration.

    Raises
    ------
    ConfigError
        With a ``file:line:`` prefix pointing at the offending entry.
    """
    path = Path(path) if path is not None else None
    raw = path.read_text() if path is not None else ""
    name = str(path) if path is not None else "<defaults>"
    lines = raw.splitlines()
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";",))
    parser.optionxform = str
    try:
        parser.read_string(raw, source=name)
    except configparser.Error as exc:
        lineno = getattr(exc, "lineno", 0) or 0
        msg = getattr(exc, "message", str(exc)).splitlines()[0]
        raise ConfigError(f"{name}:{lineno}: {msg}") from None
    allowed = COMMANDS[command]
    for sec in parser.sections():
        if sec not in allowed:
            raise ConfigError(f"{name}:{_line_of(lines, sec, None)}: section [{sec}] is not used by "
                              f"'{command}' (allowed: {', '.join(allowed)})")
    for sec in REQUIRED_SECTIONS[command]:
        if not parser.has_section(sec):
            raise ConfigError(f"{name}:0: '{command}' needs a [{sec}] section")
    overrides = overrides or {}
    values: dict = {}
    resolved = configparser.ConfigParser(interpolation=None)
    resolved.optionxform = str
    for sec in allowed:
        schema = SCHEMA[sec]
        given = parser[sec] if parser.has_section(sec) else {}
        for key in given:
            if key not in schema:
                raise ConfigError(f"{name}:{_line_of(lines, sec, key)}: unknown key '{key}' in [{sec}]")
        out = {}
        resolved.add_section(sec)
        for key, (kind, default) in schema.items():
            text = overrides.get((sec, key), given.get(key) if key in given else None)
            if text is None:
                if default is _REQUIRED:
                    if not parser.has_section(sec):
                        continue
                    raise ConfigError(f"{name}:{_line_of(lines, sec, None)}: [{sec}] needs '{key}'")
                if default is None:
                    out[key] = None
                    continue
                text = str(default)
            try:
                out[key] = kind(text)
            except ValueError as exc:
                raise ConfigError(f"{name}:{_line_of(lines, sec, key)}: [{sec}] {key}: {exc}") from None
            resolved[sec][key] = str(text).strip()
        values[sec] = out
    buf = io.StringIO()
    resolved.write(buf)
    return RunConfig(command, values, buf.getvalue().replace("\r\n", "\n").rstrip("\n") + "\n", name, lines)


def header_lines(cfg: RunConfig) -> list[str]:
    return [f"rhb {__version__} {cfg.command}"] + cfg.text.rstrip("\n").split("\n")


# ---------------------------------------------------------------------------
# building blocks from configuration


def _given(**kw):
    return {k: v for k, v in kw.items() if v is not None}


def make_system(cfg: RunConfig):
    s = cfg["system"]
    name = s["name"]
    try:
        if name == "linear":
            return linear_oscillator(**_given(c=s["c"], k=s["k"], F=s["F"]))
        if name == "duffing":
            kw = _given(c=s["c"], k=s["k"], F=s["F"])
            for key in ("alpha", "phi"):
                if s[key] is not None:
                    kw[key] = s[key][0] if len(s[key]) == 1 else tuple(s[key])
            return duffing_system(DuffingParams(**kw))
        if name in ("rayleigh_plesset", "rayleigh_plesset_recast"):
            p = RayleighPlessetParams(**_given(**{k: s[k] for k in "ABCDE"}))
            return rayleigh_plesset_system(p) if name == "rayleigh_plesset" else rayleigh_plesset_recast(p)
        if name in ("crtbp", "crtbp_recast"):
            p = CRTBPParams(**_given(mu=s["mu"], libration_point=s["point"]))
            return crtbp_system(p) if name == "crtbp" else crtbp_recast(p)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{cfg.at('system', 'name')} [system] {exc}") from None
    raise ConfigError(f"{cfg.at('system', 'name')} [system] unknown system '{name}' (linear, duffing, rayleigh_plesset, "
                      "rayleigh_plesset_recast, crtbp, crtbp_recast)")


def _crtbp_params(cfg: RunConfig) -> CRTBPParams:
    s = cfg["system"]
    return CRTBPParams(**_given(mu=s["mu"], libration_point=s["point"]))


def _omega(cfg: RunConfig, sys_def) -> float:
    w = cfg["method"]["omega"]
    if w is None:
        w = sys_def.params.get("omega")
    if w is None:
        raise ConfigError(f"{cfg.at('method')} [method] needs 'omega'")
    return float(w)


def make_residual_factory(cfg: RunConfig, sys_def, anchor_coord=None):
    m = cfg["method"]
    anchor = None
    if sys_def.autonomous:
        coord = anchor_coord if anchor_coord is not None else (m["anchor"] if m["anchor"] is not None else 0)
        try:
            anchor = PhaseAnchor(coord, m["closure"])
        except ValueError as exc:
            raise ConfigError(f"{cfg.at('method', 'closure')} [method] {exc}") from None
    if m["formulation"] not in ("time", "frequency"):
        raise ConfigError(f"{cfg.at('method', 'formulation')} [method] formulation must be 'time' or 'frequency'")

    def factory(omega):
        if m["formulation"] == "frequency":
            return build_hb_residual(sys_def, HarmonicBasis(m["order"], omega), anchor=anchor)
        return build_time_domain_residual(sys_def, MethodConfig(m["mode"], m["order"], omega, m["M"]),
                                          anchor=anchor)

    try:
        factory(_omega(cfg, sys_def) if m["omega"] is not None or "omega" in sys_def.params else 1.0)
    except ValueError as exc:
        raise ConfigError(f"{cfg.at('method', 'mode')} [method] {exc}") from None
    return factory


def newton_options(cfg: RunConfig) -> NewtonOptions:
    n = cfg["newton"]
    try:
        return NewtonOptions(n["tol"], n["max_iter"], n["max_halvings"])
    except ValueError as exc:
        raise ConfigError(f"{cfg.at('newton')} [newton] {exc}") from None


def criteria(cfg: RunConfig) -> PhysicalityCriteria:
    p = cfg["physicality"]
    return PhysicalityCriteria(p["return_tol"], p["defect_tol"], p["integration_tol"], p["shooting_tol"])


def _fit_harmonics(values, dim, size, where=""):
    c = np.asarray(values, dtype=float)
    if c.size % dim:
        raise ConfigError(f"{where} [initial] values: {c.size} numbers do not split into {dim} rows")
    c = c.reshape(dim, -1)
    out = np.zeros((dim, size))
    k = min(size, c.shape[1])
    out[:, :k] = c[:, :k]
    return out


def initial_guess(cfg: RunConfig, sys_def, basis: HarmonicBasis):
    ini = cfg["initial"]
    kind = ini["kind"]
    if kind == "zeros":
        return np.zeros((sys_def.dim, basis.size))
    if kind == "coefficients":
        if ini["values"] is None:
            raise ConfigError(f"{cfg.at('initial', 'kind')} [initial] kind = coefficients needs 'values'")
        return _fit_harmonics(ini["values"], sys_def.dim, basis.size, cfg.at("initial", "values"))
    if kind == "settle":
        state = ini["state"]
        if state is None:
            raise ConfigError(f"{cfg.at('initial', 'kind')} [initial] kind = settle needs 'state'")
        c = settle_and_project(sys_def, np.asarray(state, dtype=float), basis, ini["settle_periods"])
        return c
    if kind == "crtbp":
        fam = ini["family"]
        if fam not in CRTBP_FAMILIES:
            raise ConfigError(f"{cfg.at('initial', 'family')} [initial] family must be one of {CRTBP_FAMILIES}")
        amp = ini["amplitude"]
        a = None if amp is None else (amp[0] if len(amp) == 1 else tuple(amp))
        return crtbp_seed(fam, basis, a, _crtbp_params(cfg), recast=sys_def.dim == 8)
    raise ConfigError(f"{cfg.at('initial', 'kind')} [initial] unknown kind '{kind}' (zeros, coefficients, settle, crtbp)")


# ---------------------------------------------------------------------------
# output helpers


def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return "%.17g" % float(x)


def write_csv(path: Path, header: list[str], columns: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        for line in header:
            fh.write(f"# {line}\n".replace("# \n", "#\n"))
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([v if isinstance(v, str) else fmt(v) for v in row])


def write_report(path: Path, header: list[str], sections: dict) -> None:
    with open(path, "w", newline="") as fh:
        for line in header:
            fh.write(f"# {line}\n".replace("# \n", "#\n"))
        for name, items in sections.items():
            fh.write(f"\n[{name}]\n")
            for k, v in items.items():
                fh.write(f"{k} = {v if isinstance(v, str) else fmt(v)}\n")


def coefficient_rows(sys_def, coeffs):
    labels = sys_def.labels or tuple(f"x{k}" for k in range(sys_def.dim))
    return [[k, labels[k]] + list(coeffs[k]) for k in range(sys_def.dim)]


def coefficient_columns(N):
    cols = ["component", "label", "a0"]
    for n in range(1, N + 1):
        cols += [f"cos{n}", f"sin{n}"]
    return cols


def aliasing_diagnostics(res, coeffs) -> dict:
    """How far the time-domain balance is from exact harmonic balance at `coeffs`."""
    sys_def = res.system
    out: dict = {}
    if res.formulation != "time":
        out["nodes"] = "none (exact convolution)"
        out["time_frequency_gap"] = 0.0
        return out
    N, M = res.basis.order, res.M
    out["nodes"] = M
    out["rhb_minimum_nodes"] = fmt((sys_def.degree_phi + 1) * N + 1) if sys_def.degree_phi else "n/a"
    if sys_def.degree_phi and sys_def.degree_phi >= 2:
        pred = predict_alias_entries(N, sys_def.degree_phi, M)
        out["alias_norm_inf"] = float(np.max(np.abs(res.ops.E_alias).sum(axis=1)))
        out["predicted_nonzeros"] = int(pred.nnz)
    else:
        out["alias_norm_inf"] = 0.0
        out["predicted_nonzeros"] = 0
    if sys_def.poly is None:
        out["time_frequency_gap"] = "n/a (non-polynomial field)"
        return out
    ops = res.ops
    xt = np.asarray(coeffs) @ ops.E.T
    ft = sys_def.field(xt, ops.grid.nodes, res.basis.omega)
    projected = ft @ ops.E_plus.T
    exact = poly_harmonics_full(np.asarray(coeffs), sys_def.poly, sys_def.degree_phi)[..., : res.basis.size]
    out["time_frequency_gap"] = float(np.max(np.abs(projected - exact)))
    return out


# ---------------------------------------------------------------------------
# commands


def cmd_solve(cfg: RunConfig, out: Path) -> int:
    sys_def = make_system(cfg)
    factory = make_residual_factory(cfg, sys_def)
    omega = _omega(cfg, sys_def)
    res = factory(omega)
    guess = initial_guess(cfg, sys_def, res.basis)
    rep = solve_config(res, guess, newton_options(cfg), criteria(cfg))
    hdr = header_lines(cfg)
    sections = {
        "result": {
            "system": sys_def.name, "formulation": res.formulation, "order": res.basis.order,
            "omega": omega, "converged": rep.converged, "iterations": rep.iterations,
            "residual": rep.residual, "unfolding": rep.eps, "classification": rep.classification,
            "message": rep.message or "ok",
        },
        "residual_history": {str(i): v for i, v in enumerate(rep.residual_history)},
    }
    if rep.verification is not None:
        m = rep.verification
        sections["verification"] = {
            "period_return_error": m.period_return_error, "defect_rms": m.defect_rms,
            "field_scale": m.field_scale,
            "shooting_distance": "not computed" if m.shooting_distance is None else m.shooting_distance,
        }
    sections["aliasing"] = aliasing_diagnostics(res, rep.coeffs)
    write_report(out / "report.txt", hdr, sections)
    write_csv(out / "coefficients.csv", hdr, coefficient_columns(res.basis.order),
              coefficient_rows(sys_def, rep.coeffs))
    return EXIT_OK if rep.converged else EXIT_NONCONVERGED


def _amplitude_count(sys_def) -> int:
    return 3 if sys_def.name.startswith("crtbp") else 1


def _sweep_center(sys_def):
    if sys_def.name.startswith("crtbp"):
        c = np.zeros(sys_def.dim)
        c[0] = sys_def.params["L"]
        return c
    return None


def _parse_families(text, where=""):
    seeds = []
    for item in text.split(","):
        parts = item.strip().split(":")
        if len(parts) < 2 or parts[0] not in CRTBP_FAMILIES:
            raise ConfigError(f"{where} [sweep] families: bad entry '{item.strip()}' "
                              "(expected family:omega[:amplitude[:amplitude]])")
        try:
            nums = [float(v) for v in parts[1:]]
        except ValueError:
            raise ConfigError(f"{where} [sweep] families: bad number in '{item.strip()}'") from None
        amp = nums[1:]
        seeds.append((parts[0], nums[0], None if not amp else (amp[0] if len(amp) == 1 else tuple(amp))))
    return seeds


def run_sweep(cfg: RunConfig, threads: int = 1):
    sys_def = make_system(cfg)
    sw = cfg["sweep"]
    opt = newton_options(cfg)
    center = _sweep_center(sys_def)
    kw = dict(opt=opt, center=center, jump_tol=sw["jump_tol"], min_amplitude=sw["min_amplitude"])
    rng = (sw["omega_min"], sw["omega_max"])
    if not sw["step"] > 0 or not rng[0] < rng[1]:
        raise ConfigError(f"{cfg.at('sweep', 'step')} [sweep] needs omega_min < omega_max and step > 0")
    branches = []
    if sw["families"]:
        if not sys_def.name.startswith("crtbp"):
            raise ConfigError(f"{cfg.at('sweep', 'families')} [sweep] families only apply to crtbp systems")
        p = _crtbp_params(cfg)
        for fam, w, amp in _parse_families(sw["families"], cfg.at("sweep", "families")):
            factory = make_residual_factory(cfg, sys_def, CRTBP_ANCHOR[fam])
            basis = factory(w).basis
            guess = crtbp_seed(fam, basis, amp, p, recast=sys_def.dim == 8)
            branches += frequency_sweep(factory, rng, sw["step"], [(w, guess)], **kw)
    else:
        factory = make_residual_factory(cfg, sys_def)
        seeds = []
        for w in sw["seed_omegas"] or []:
            seeds.append((w, initial_guess(cfg, sys_def, factory(w).basis)))
        if sw["seed_multistart"] is not None:
            w = sw["seed_multistart"]
            res = factory(w)
            ms = multistart(res, sw["multistart_bounds"], sw["multistart_trials"], seed=cfg_seed(cfg),
                            opt=opt, criteria=None, workers=threads)
            seeds += [(w, c.report.coeffs) for c in ms.clusters]
        if not seeds:
            raise ConfigError(f"{cfg.at('sweep')} [sweep] needs seed_omegas, seed_multistart or families")
        branches = frequency_sweep(factory, rng, sw["step"], seeds, **kw)
    from .solvers import dedup_branches

    branches = dedup_branches(branches)
    branches.sort(key=lambda b: (round(b[0].omega, 12), tuple(np.round(b[0].amplitude, 12))))
    return sys_def, branches


def cfg_seed(cfg: RunConfig) -> int:
    for sec in ("montecarlo", "identity"):
        if sec in cfg.values and cfg[sec].get("seed") is not None:
            return cfg[sec]["seed"]
    return 0


def cmd_sweep(cfg: RunConfig, out: Path, threads: int = 1) -> int:
    sys_def, branches = run_sweep(cfg, threads)
    hdr = header_lines(cfg)
    labels = sys_def.labels or tuple(f"x{k}" for k in range(sys_def.dim))
    na = _amplitude_count(sys_def)
    cols = ["branch_id", "omega"] + [f"amplitude_{labels[k]}" for k in range(na)] + ["coeff_file"]
    rows = []
    for i, br in enumerate(branches):
        fname = f"branch_{i:03d}.csv"
        for p in br:
            rows.append([i, p.omega] + list(p.amplitude[:na]) + [fname])
        N = (br[0].coeffs.shape[-1] - 1) // 2
        crow = []
        for p in br:
            crow.append([p.omega, p.residual, p.eps] + list(np.ravel(p.coeffs)))
        ccols = ["omega", "residual", "unfolding"] + [
            f"{labels[k]}_{c}" for k in range(sys_def.dim) for c in coefficient_columns(N)[2:]]
        write_csv(out / fname, hdr, ccols, crow)
    write_csv(out / "branches.csv", hdr, cols, rows)
    junctions = branch_junctions(branches, cfg["sweep"]["junction_tol"], coords=list(range(min(2, na))))
    write_csv(out / "junctions.csv", hdr, ["branch_a", "branch_b", "omega", "distance"],
              [list(j) for j in junctions])
    return EXIT_OK if branches else EXIT_NONCONVERGED


def cmd_montecarlo(cfg: RunConfig, out: Path, threads: int = 1) -> int:
    sys_def = make_system(cfg)
    res = make_residual_factory(cfg, sys_def)(_omega(cfg, sys_def))
    mc = cfg["montecarlo"]
    b = mc["bounds"]
    if len(b) == 2:
        bounds = (b[0], b[1])
    elif len(b) == 2 * res.n_unknowns:
        bounds = np.reshape(b, (-1, 2))
    else:
        raise ConfigError(f"{cfg.at('montecarlo', 'bounds')} [montecarlo] bounds needs 2 or {2 * res.n_unknowns} numbers")
    result = multistart(res, bounds, mc["trials"], seed=mc["seed"], opt=newton_options(cfg),
                        cluster_tol=mc["cluster_tol"], criteria=criteria(cfg), workers=threads)
    hdr = header_lines(cfg) + [
        f"trials = {result.trials}", f"converged = {result.converged}",
        f"clusters = {len(result.clusters)}",
        f"physical = {sum(c.report.classification == 'physical' for c in result.clusters)}",
    ]
    N = res.basis.order
    labels = sys_def.labels or tuple(f"x{k}" for k in range(sys_def.dim))
    cols = ["cluster", "hit_count", "classification", "residual", "period_return_error", "defect_rms",
            "unfolding"] + [f"{labels[k]}_{c}" for k in range(sys_def.dim) for c in coefficient_columns(N)[2:]]
    rows = []
    for i, c in enumerate(result.clusters):
        m = c.report.verification
        rows.append([i, c.hits, c.report.classification, c.report.residual,
                     m.period_return_error if m else None, m.defect_rms if m else None, c.report.eps]
                    + list(np.ravel(c.report.coeffs)))
    write_csv(out / "clusters.csv", hdr, cols, rows)
    return EXIT_OK if result.converged else EXIT_NONCONVERGED


def aliasing_table(N: int, phi: int, M_min=None, M_max=None):
    """Rows ``(M, |E_A|_inf, predicted_nonzeros, match)``."""
    M_min = 2 * N + 1 if M_min is None else M_min
    M_max = (phi + 1) * N + 3 if M_max is None else M_max
    rows = []
    for M in range(M_min, M_max + 1):
        basis = HarmonicBasis(N, 1.0)
        ops = build_operators(basis, build_grid(basis, M), phi)
        EA = np.asarray(ops.E_alias)
        if phi >= 2:
            pred = predict_alias_entries(N, phi, M).toarray()
            nnz = int(np.count_nonzero(pred))
            match = bool(np.max(np.abs(pred - EA)) < 1e-10)
        else:
            nnz, match = 0, EA.size == 0
        norm = float(np.max(np.abs(EA).sum(axis=1))) if EA.size else 0.0
        rows.append((M, norm, nnz, match))
    return rows


def cmd_aliasing(cfg: RunConfig, out: Path) -> int:
    a = cfg["aliasing"]
    if a["N"] < 1 or a["phi"] < 1:
        raise ConfigError(f"{cfg.at('aliasing', 'N')} [aliasing] N and phi must be positive")
    if a["M_min"] is not None and a["M_min"] < 2 * a["N"] + 1:
        raise ConfigError(f"{cfg.at('aliasing', 'M_min')} [aliasing] M_min must be at least 2N+1")
    rows = aliasing_table(a["N"], a["phi"], a["M_min"], a["M_max"])
    write_csv(out / "aliasing.csv", header_lines(cfg), ["M", "norm", "predicted_nonzeros", "match"], rows)
    return EXIT_OK


def identity_cases(N: int, phi: int, cases: int, seed: int, M=None, dim: int = 1):
    """Rows ``(case, M, gap, decomposition_error, scale)`` for random polynomials."""
    from .solvers import trial_rng

    M = (phi + 1) * N + 1 if M is None else M
    rows = []
    for k in range(cases):
        rng = trial_rng(seed, k)
        poly = random_polynomial(rng, dim, phi)
        omega = float(rng.uniform(0.5, 3.0))
        basis = HarmonicBasis(N, omega)
        coeffs = rng.uniform(-1, 1, (dim, basis.size)) / (1.0 + np.arange(basis.size) // 2)
        gap = conditional_identity_gap(coeffs, poly, basis, M, phi)
        dec = alias_decomposition_error(coeffs, poly, basis, M, phi)
        h = poly_harmonics_full(coeffs, [poly], phi)[..., : basis.size]
        rows.append((k, M, gap, dec, 1.0 + float(np.max(np.abs(h)))))
    return rows


def cmd_identity(cfg: RunConfig, out: Path) -> int:
    c = cfg["identity"]
    if c["N"] < 1 or c["phi"] < 1 or c["cases"] < 1:
        raise ConfigError(f"{cfg.at('identity', 'N')} [identity] N, phi and cases must be positive")
    if c["M"] is not None and c["M"] < 2 * c["N"] + 1:
        raise ConfigError(f"{cfg.at('identity', 'M')} [identity] M must be at least 2N+1")
    rows = identity_cases(c["N"], c["phi"], c["cases"], c["seed"], c["M"], c["dim"])
    write_csv(out / "identity.csv", header_lines(cfg), ["case", "M", "gap", "decomposition_error", "scale"],
              rows)
    return EXIT_OK


def cmd_propagate(cfg: RunConfig, out: Path) -> int:
    sys_def = make_system(cfg)
    pr = cfg["propagate"]
    ini = cfg["initial"]
    omega = _omega(cfg, sys_def)
    hdr = header_lines(cfg)
    coeffs = basis = None
    if ini["kind"] == "state":
        if ini["state"] is None or len(ini["state"]) != sys_def.dim:
            raise ConfigError(f"{cfg.at('initial', 'state')} [initial] kind = state needs 'state' with {sys_def.dim} numbers")
        x0 = np.asarray(ini["state"], dtype=float)
        period = 2 * np.pi / omega
    else:
        res = make_residual_factory(cfg, sys_def)(omega)
        rep = newton_solve(res, initial_guess(cfg, sys_def, res.basis), newton_options(cfg))
        if not rep.converged:
            log.error("harmonic balance solve did not converge (residual %.3e)", rep.residual)
            return EXIT_NONCONVERGED
        coeffs, basis = rep.coeffs, res.basis
        x0 = coeffs[:, 0] + coeffs[:, 1::2].sum(axis=1)
        period = basis.period
    physical = sys_def.name.startswith("crtbp")
    keep_sys = crtbp_system(_crtbp_params(cfg)) if physical else sys_def
    if physical:
        x0 = x0[:6]
    traj = propagate(keep_sys, x0, (0.0, pr["periods"] * period), tol=pr["tol"], omega=omega)
    export_csv(traj, out / "trajectory.csv", labels=keep_sys.labels, header="\n".join(hdr),
               samples=pr["samples"])
    keeping = pr["keeping"] if pr["keeping"] is not None else (physical and coeffs is not None)
    if keeping:
        if coeffs is None or not physical:
            raise ConfigError(f"{cfg.at('propagate', 'keeping')} [propagate] keeping needs a crtbp system solved from [initial]")
        rpt = orbit_keeping(keep_sys, coeffs[:6], basis, pr["max_periods"], pr["drift_threshold"],
                            pr["section_radius"], tol=pr["tol"])
        write_report(out / "orbit_keeping.txt", hdr, {
            "orbit_keeping": {
                "periods_maintained": rpt.periods_maintained,
                "section_crossings": rpt.section_crossings,
                "drift_per_period": ", ".join(fmt(d) for d in rpt.drift_per_period),
            }
        })
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rhb", description="Harmonic balance experiments.")
    ap.add_argument("--version", action="version", version=f"rhb {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, required=True, help="INI run configuration")
        p.add_argument("--out", type=Path, default=Path("."), help="output directory")
        p.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
        p.add_argument("--threads", type=int, default=None,
                       help=f"worker threads (default: ${ENV_THREADS} or 1)")
        p.add_argument("-v", "--verbose", action="store_true")
    return ap


def thread_count(flag) -> int:
    if flag is not None:
        return max(1, flag)
    env = os.environ.get(ENV_THREADS)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"${ENV_THREADS} must be an integer, got {env!r}") from None
    return 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = {}
        if args.seed is not None:
            for sec in ("montecarlo", "identity"):
                if sec in COMMANDS[args.command]:
                    overrides[(sec, "seed")] = str(args.seed)
        cfg = load_config(args.command, args.config, overrides)
        threads = thread_count(args.threads)
        args.out.mkdir(parents=True, exist_ok=True)
        if args.command == "solve":
            return cmd_solve(cfg, args.out)
        if args.command == "sweep":
            return cmd_sweep(cfg, args.out, threads)
        if args.command == "montecarlo":
            return cmd_montecarlo(cfg, args.out, threads)
        if args.command == "aliasing":
            return cmd_aliasing(cfg, args.out)
        if args.command == "identity-check":
            return cmd_identity(cfg, args.out)
        return cmd_propagate(cfg, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
