"""Command-line front end: ``poltrans <subcommand> --config run.toml``.

Exit status: 0 on success, 1 on invalid input (config or domain errors),
2 when a numerical check fails (the JSON report names the residual).
"""
from __future__ import annotations

import argparse
import copy
import csv
import json
import math
import os
import re
import sys
from pathlib import Path

import numpy as np
try:
    import tomllib as tomli
except ModuleNotFoundError:  # Python < 3.11
    import tomli

from . import hflimit, kernel, mcoracle, rtbridge, source, transport
from .geometry import DomainError, beta, gamma_block
from .grid import DirectionGrid
from .medium import GAUSSIAN, TABULATED, CorrelationTable, SpectralMedium

OUT_ENV = "POLTRANS_OUT_DIR"
SUBCOMMANDS = ("kernel", "mfp", "evolve", "hf", "rt-check", "mc-verify", "field")

DEFAULTS: dict = {
    "seed": 0,
    "output": {"dir": "poltrans-out"},
    "medium": {"model": "gaussian", "alpha": 1.0, "gamma": 2.0 * math.pi / 50.0,
               "gamma_j": 2.0 * math.pi / 50.0, "k": 2.0 * math.pi, "table": ""},
    "source": {"kind": "GaussianTMPower", "gamma_j": 0.0, "widths": [0.1, 0.03],
               "rotation": math.pi / 4.0, "peak": 1.0, "table": ""},
    "grid": {"layout": "polar", "n_radial": 48, "n_angular": 64, "kappa_max": 0.5,
             "spacing": 0.02},
    "kernel": {"n_radial": 96, "n_angular": 256, "check_tol": 1e-6},
    "evolve": {"z_end": 5.0, "z_units": "mfp", "dz": 0.0, "snapshots": [0.0],
               "operator": "auto", "drift_tol": 1e-4},
    "hf": {"gammas": [2.0 * math.pi / 50.0, 2.0 * math.pi / 100.0, 2.0 * math.pi / 200.0],
           "kappa": [[0.1, 0.0], [0.3, 0.1], [0.5, 0.5], [1.0, 0.0], [0.05, 0.02]],
           "z_hf": 0.16, "kappa_bar_j": 1.0, "spacing": 0.0, "radius": 0.0},
    "mc": {"epsilon": 1e-3, "gamma": 2.0 * math.pi / 10.0, "z_end": 0.15,
           "n_realizations": 400, "box": 8.0, "lattice_half_width": 2, "batch": 50,
           "n_records": 20},
    "field": {"points": [[0.0, 0.0, 1.0]], "n_radial": 96, "n_angular": 256,
              "kappa_max": 0.95},
}

_MODEL_NAMES = {"gaussian": GAUSSIAN, GAUSSIAN: GAUSSIAN, "tabulated": TABULATED,
                TABULATED: TABULATED}


class ConfigError(ValueError):
    """Invalid run configuration."""


class CheckFailed(RuntimeError):
    """A numerical acceptance check failed."""


NUMERICAL_ERRORS = (kernel.QuadratureError, transport.PositivityError,
                    transport.EnergyDriftError, rtbridge.NonScalarError,
                    mcoracle.StepSizeError, source.QuadratureFailure, CheckFailed)


# ----------------------------------------------------------------------
# configuration
def _key_line(text: str, section: str | None, key: str) -> int:
    current = None
    for number, line in enumerate(text.splitlines(), start=1):
        head = re.match(r"^\s*\[([^\]]+)\]\s*(#.*)?$", line)
        if head:
            current = head.group(1).strip()
            continue
        if current == section and re.match(rf"^\s*{re.escape(key)}\s*=", line):
            return number
    return 0


def _merge(defaults: dict, given: dict, text: str, section: str | None = None) -> dict:
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        where = f"[{section}] " if section else ""
        if key not in defaults:
            line = _key_line(text, section, key) if section else _key_line(text, None, key)
            if isinstance(value, dict):
                line = next((n for n, l in enumerate(text.splitlines(), 1)
                             if re.match(rf"^\s*\[{re.escape(key)}\]", l)), 0)
            raise ConfigError(f"unknown config key {where}{key!r} at line {line}")
        default = defaults[key]
        if isinstance(default, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {key!r} must be a section")
            out[key] = _merge(default, value, text, key)
            continue
        if isinstance(default, bool) or isinstance(value, bool):
            ok = isinstance(value, bool) == isinstance(default, bool)
        elif isinstance(default, float):
            ok = isinstance(value, (int, float))
            value = float(value) if ok else value
        elif isinstance(default, int):
            ok = isinstance(value, int)
        else:
            ok = isinstance(value, type(default))
        if not ok:
            line = _key_line(text, section, key)
            raise ConfigError(f"config key {where}{key!r} at line {line} has the wrong type "
                              f"(expected {type(default).__name__})")
        out[key] = value
    return out


def load_config(path: str | None) -> dict:
    """Parse a TOML run config and fill in defaults (strict about unknown keys)."""
    if path is None:
        return copy.deepcopy(DEFAULTS)
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"config parse error: {exc}") from exc
    cfg = _merge(DEFAULTS, data, text)
    cfg["_base"] = str(Path(path).resolve().parent)
    return cfg


def _path(cfg: dict, value: str) -> Path:
    p = Path(value)
    return p if p.is_absolute() else Path(cfg.get("_base", ".")) / p


def make_medium(cfg: dict) -> SpectralMedium:
    m = cfg["medium"]
    model = _MODEL_NAMES.get(m["model"])
    if model is None:
        raise ConfigError(f"unknown medium model {m['model']!r}")
    table = None
    if model == TABULATED:
        if not m["table"]:
            raise ConfigError("the tabulated medium needs [medium] table = <csv path>")
        table = CorrelationTable.from_csv(_path(cfg, m["table"]))
    return SpectralMedium(model, m["alpha"], m["gamma"], m["gamma_j"], m["k"], table)


def make_source(cfg: dict, medium: SpectralMedium) -> source.SourceSpec:
    s = cfg["source"]
    gamma_j = s["gamma_j"] if s["gamma_j"] > 0 else medium.gamma_j
    if s["kind"] == source.CURRENT:
        if not s["table"]:
            raise ConfigError("CurrentDensity needs [source] table = <csv path>")
        table = source.CurrentTable.from_csv(_path(cfg, s["table"]))
        return source.SourceSpec.from_current_table(table, gamma_j, medium.k)
    if len(s["widths"]) != 2:
        raise ConfigError("[source] widths must have two entries")
    return source.SourceSpec(s["kind"], gamma_j, medium.k, tuple(float(w) for w in s["widths"]),
                             s["rotation"], s["peak"])


def make_grid(cfg: dict) -> DirectionGrid:
    g = cfg["grid"]
    if g["layout"] in ("polar", "PolarIsotropic"):
        return DirectionGrid.polar(g["n_radial"], g["n_angular"], g["kappa_max"])
    if g["layout"] in ("cartesian", "Cartesian"):
        return DirectionGrid.cartesian(g["spacing"], g["kappa_max"])
    raise ConfigError(f"unknown grid layout {g['layout']!r}")


def make_quad(cfg: dict, kappa_max: float) -> kernel.QuadSpec:
    q = cfg["kernel"]
    tol = q["check_tol"] if q["check_tol"] > 0 else None
    return kernel.QuadSpec(q["n_radial"], q["n_angular"], min(0.95, max(kappa_max, 1e-3)),
                           check_tol=tol)


# ----------------------------------------------------------------------
# output helpers
def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return format(float(value), ".17g")


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items() if not str(k).startswith("_")}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")


def _polar_coords(nodes: np.ndarray):
    return np.hypot(nodes[:, 0], nodes[:, 1]), np.mod(np.arctan2(nodes[:, 1], nodes[:, 0]),
                                                      2.0 * math.pi)


# ----------------------------------------------------------------------
# subcommands
def cmd_kernel(cfg: dict, out: Path) -> dict:
    medium = make_medium(cfg)
    grid = make_grid(cfg)
    quad = make_quad(cfg, grid.kappa_max + medium.spectral_radius() * medium.gamma / medium.k)
    kf = kernel.build_kernel_field(medium, grid, quad)
    r, th = _polar_coords(grid.nodes)
    q = kf.Q
    write_csv(out / "kernel.csv",
              ["kappa_r", "kappa_theta", "ReQ11", "ImQ11", "ReQ12", "ImQ12", "ReQ22", "ImQ22",
               "lambda1", "lambda2", "mfp_tm", "mfp_te"],
              zip(r, th, q[:, 0, 0].real, q[:, 0, 0].imag, q[:, 0, 1].real, q[:, 0, 1].imag,
                  q[:, 1, 1].real, q[:, 1, 1].imag, kf.lambda1, kf.lambda2, kf.mfp_tm, kf.mfp_te))
    scale = np.max(np.abs(q))
    sym = float(np.max(np.abs(q - np.swapaxes(q, 1, 2))) / scale)
    re_eig = np.linalg.eigvalsh(q.real)
    s_eig = np.linalg.eigvalsh(kf.S)
    checks = {"complex_symmetric": sym < 1e-12, "re_q_negative_definite": bool(np.all(re_eig < 0)),
              "s_positive_definite": bool(np.all(s_eig > 0))}
    return {"residuals": {"symmetry": sym, "max_re_q_eigenvalue": float(re_eig.max()),
                          "min_s_eigenvalue": float(s_eig.min())},
            "checks": checks, "grid": grid.describe()}


def _radial_nodes(grid: DirectionGrid) -> np.ndarray:
    if grid.radii is not None:
        radii = grid.radii
    else:
        radii = np.unique(np.round(grid.norms, 14))
    return np.stack([radii, np.zeros_like(radii)], axis=-1)


def cmd_mfp(cfg: dict, out: Path) -> dict:
    medium = make_medium(cfg)
    grid = make_grid(cfg)
    nodes = _radial_nodes(grid)
    quad = make_quad(cfg, grid.kappa_max + medium.spectral_radius() * medium.gamma / medium.k)
    tm, te = kernel.mean_free_paths(medium, nodes, quad)
    write_csv(out / "mfp.csv", ["kappa_r", "mfp_tm", "mfp_te"], zip(nodes[:, 0], tm, te))
    checks = {"tm_decreasing": bool(np.all(np.diff(tm) < 0)),
              "te_decreasing": bool(np.all(np.diff(te) < 0))}
    return {"checks": checks, "innermost_mfp_tm": float(tm[0]), "grid": grid.describe()}


def _innermost_mfp(medium: SpectralMedium, grid: DirectionGrid, quad: kernel.QuadSpec) -> float:
    node = grid.nodes[np.argmin(grid.norms)][None, :]
    return float(kernel.mean_free_paths(medium, node, quad)[0][0])


def cmd_evolve(cfg: dict, out: Path) -> dict:
    medium = make_medium(cfg)
    grid = make_grid(cfg)
    spec = make_source(cfg, medium)
    ev = cfg["evolve"]
    quad = kernel.QuadSpec(64, 128, min(0.95, grid.kappa_max + 1e-9))
    if ev["z_units"] == "mfp":
        unit = _innermost_mfp(medium, grid, quad)
    elif ev["z_units"] == "absolute":
        unit = 1.0
    else:
        raise ConfigError("[evolve] z_units must be 'mfp' or 'absolute'")
    kind = ev["operator"]
    if kind not in ("auto", "radial", "pair"):
        raise ConfigError("[evolve] operator must be auto, radial or pair")
    radial = None if kind == "auto" else kind == "radial"
    if radial is None and grid.layout == "PolarIsotropic" and spec.kind != source.GAUSSIAN_TM:
        radial = False
    op = transport.build_operator(medium, grid, radial=radial, quad=quad)
    p0 = transport.CoherenceField(grid, source.initial_field(spec, grid))
    z_end = ev["z_end"] * unit
    snaps = [s * unit for s in ev["snapshots"]]
    dz = ev["dz"] * unit if ev["dz"] > 0 else None
    final, traj = transport.evolve(op, p0, z_end, dz=dz, snapshots=snaps,
                                   drift_tol=ev["drift_tol"])
    traj.snapshots.setdefault(z_end, final)
    files = []
    for i, (z, fld) in enumerate(sorted(traj.snapshots.items())):
        st = transport.stokes(fld)
        r, th = _polar_coords(grid.nodes)
        name = f"snapshot_{i:02d}.csv"
        files.append({"file": name, "z": z})
        write_csv(out / name,
                  ["kappa_r", "kappa_theta", "P11", "P22", "ReP12", "ImP12", "S1", "S2", "S3",
                   "S4", "pol"],
                  zip(r, th, fld.p11, fld.p22, fld.p12.real, fld.p12.imag, st.s1, st.s2, st.s3,
                      st.s4, st.pol))
    write_csv(out / "trajectory.csv", ["z", "energy", "min_eig", "C_P"],
              zip(traj.z, traj.energy, traj.min_eig, traj.c_p))
    return {"grid": grid.describe(), "z_unit": unit, "z_end": z_end, "snapshots": files,
            "energy_drift": traj.energy_drift, "min_eig_ratio": float(min(traj.min_eig_ratio)),
            "steps": len(traj.z) - 1, "checks": {}}


def cmd_hf(cfg: dict, out: Path) -> dict:
    medium = make_medium(cfg)
    h = cfg["hf"]
    gammas = [float(g) for g in h["gammas"]]
    spacing = h["spacing"] if h["spacing"] > 0 else None
    radius = h["radius"] if h["radius"] > 0 else None
    comp = hflimit.compare_full_model(medium, gammas, h["z_hf"], h["kappa_bar_j"], radius,
                                      spacing)
    write_csv(out / "hf_convergence.csv", ["gamma", "mfp_full", "mfp_hf", "rel_err"],
              [(g, mf, comp.mfp_hf, e) for g, mf, e in zip(gammas, comp.mfp_full, comp.rel_l2)])
    grid = hflimit.hf_grid(h["kappa_bar_j"], medium.k, radius, spacing)
    p0 = np.zeros((grid.size, 2, 2), dtype=complex)
    p0[:, 0, 0] = np.exp(-0.5 * medium.k ** 2 * grid.norms ** 2 / h["kappa_bar_j"] ** 2)
    _, diag = hflimit.evolve_p_tilde(medium, grid, p0, h["z_hf"])
    write_csv(out / "hf_polarization.csv", ["z", "energy", "max_cross"],
              zip(diag["z"], diag["energy"], diag["max_cross"]))
    gaps = hflimit.kernel_hf_gap(medium, np.asarray(h["kappa"], dtype=float), gammas)
    order = hflimit.fit_order(gammas, gaps)
    checks = {"cross_polarization": float(np.max(diag["max_cross"])) < 1e-12,
              "kernel_order": order >= 0.8,
              "full_model_decreasing": bool(np.all(np.diff(comp.rel_l2) < 0)) if len(gammas) > 1
              else True}
    return {"q_hf": hflimit.q_hf(medium), "hf_mean_free_path": hflimit.hf_mean_free_path(medium),
            "kernel_gaps": gaps, "kernel_order": order, "rel_l2": comp.rel_l2,
            "residuals": {"max_cross": float(np.max(diag["max_cross"]))}, "checks": checks}


def cmd_rt_check(cfg: dict, out: Path) -> dict:
    medium = make_medium(cfg)
    nodes = np.array([[0.1, 0.0], [0.3, 0.2], [0.5, -0.1], [0.05, 0.6], [0.7, 0.0]])
    quad = make_quad(cfg, 0.95)
    quad = kernel.QuadSpec(quad.n_radial, quad.n_angular, 0.95)
    rq = kernel.re_q_from_psd(medium, nodes, quad)
    rs = rtbridge.re_q_sphere(medium, nodes)
    sig = rtbridge.sigma_matrix(medium, nodes, quad)
    b = np.sqrt(1.0 - np.sum(nodes ** 2, axis=1))
    diag = np.abs(rs[:, 0, 0])
    res = {
        "sphere_vs_disk": float(np.max(np.abs(rs - rq)) / np.max(np.abs(rq))),
        "sphere_offdiag": float(np.max(np.abs(rs[:, 0, 1]) / diag)),
        "sphere_diag_equal": float(np.max(np.abs(rs[:, 0, 0] - rs[:, 1, 1]) / diag)),
        "sigma_vs_re_q": float(np.max(np.abs(sig + 2.0 * b[:, None, None] * rq))
                               / np.max(np.abs(sig))),
    }
    rng = np.random.default_rng(cfg["seed"])
    worst = 0.0
    for _ in range(100):
        a = rng.uniform(-0.6, 0.6, 2)
        c = rng.uniform(-0.6, 0.6, 2)
        t = rtbridge.t_matrix(rtbridge.lift(a, medium.k), rtbridge.lift(c, medium.k))
        g = gamma_block("aa", a, c)
        worst = max(worst, float(np.max(np.abs(t - np.sqrt(beta(a) * beta(c)) * g))))
    res["t_matrix_identity"] = worst
    checks = {"sphere_vs_disk": res["sphere_vs_disk"] < 1e-6,
              "sphere_offdiag": res["sphere_offdiag"] < 1e-8,
              "sphere_diag_equal": res["sphere_diag_equal"] < 1e-8,
              "sigma_vs_re_q": res["sigma_vs_re_q"] < 1e-6,
              "t_matrix_identity": worst < 1e-10}
    return {"residuals": res, "checks": checks}


def cmd_mc_verify(cfg: dict, out: Path) -> dict:
    medium = make_medium(cfg)
    mc = cfg["mc"]
    medium = medium.with_params(gamma=mc["gamma"])
    config = mcoracle.EnsembleConfig(epsilon=mc["epsilon"], z_end=mc["z_end"],
                                     n_realizations=mc["n_realizations"], seed=cfg["seed"],
                                     box=mc["box"], lattice_half_width=mc["lattice_half_width"],
                                     batch=mc["batch"], n_records=mc["n_records"])
    report, res = mcoracle.verify(medium, config)
    pred = mcoracle.predicted_mean(medium, res.lattice, res.samples[0, 0], res.z)
    rows = []
    for t, z in enumerate(res.z):
        for node in range(res.mean.shape[1]):
            rows.append((z, node, abs(res.mean[t, node, 0]), res.mean_se[t, node, 0],
                         abs(pred[t, node, 0])))
    write_csv(out / "mc_decay.csv", ["z", "node", "abs_mean_a", "stderr", "predicted"], rows)
    return {"checks": report.checks,
            "residuals": {"max_energy_drift": report.max_energy_drift,
                          "decay_z_scores": (np.abs(report.decay_rates - report.predicted_rates)
                                             / report.decay_se),
                          "coherence_rel_l2": report.coherence_rel_l2,
                          "decorrelation_z_scores": report.decorrelation_z},
            "decay_rates": report.decay_rates, "decay_se": report.decay_se,
            "predicted_rates": report.predicted_rates}


def cmd_field(cfg: dict, out: Path) -> dict:
    medium = make_medium(cfg)
    spec = make_source(cfg, medium)
    f = cfg["field"]
    pts = np.asarray(f["points"], dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ConfigError("[field] points must be a list of [x, y, z] triples")
    e, h = source.homogeneous_field(spec, pts, f["n_radial"], f["n_angular"], f["kappa_max"])
    rows = [tuple(p) + tuple(np.concatenate([np.stack([ee.real, ee.imag], -1).ravel(),
                                             np.stack([hh.real, hh.imag], -1).ravel()]))
            for p, ee, hh in zip(pts, e, h)]
    header = ["x", "y", "z"] + [f"{v}{c}_{part}" for v in "EH" for c in "xyz"
                                for part in ("re", "im")]
    write_csv(out / "field.csv", header, rows)
    return {"checks": {}, "points": len(pts)}


COMMANDS = {"kernel": cmd_kernel, "mfp": cmd_mfp, "evolve": cmd_evolve, "hf": cmd_hf,
            "rt-check": cmd_rt_check, "mc-verify": cmd_mc_verify, "field": cmd_field}


def _set_threads(n: int) -> None:
    if n < 0:
        raise ConfigError("--threads must be >= 0")
    try:
        import numba
    except ImportError:
        return
    if n > 0:
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="poltrans",
                                     description="Polarized wave transport in random media.")
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", help="TOML run configuration")
    parser.add_argument("--out", help="output directory (overrides config and environment)")
    parser.add_argument("--seed", type=int, help="random seed (overrides config)")
    parser.add_argument("--threads", type=int, default=0, help="worker threads, 0 = auto")
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = None
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg["seed"] = args.seed
        out = Path(args.out or os.environ.get(OUT_ENV) or cfg["output"]["dir"])
        cfg["output"]["dir"] = str(out)
        _set_threads(args.threads)
        out.mkdir(parents=True, exist_ok=True)
        summary = COMMANDS[args.subcommand](cfg, out)
    except (ConfigError, DomainError, ValueError, OSError) as exc:
        if isinstance(exc, NUMERICAL_ERRORS):
            return _numerical_failure(args, out, exc)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NUMERICAL_ERRORS as exc:
        return _numerical_failure(args, out, exc)
    summary["config"] = cfg
    summary["subcommand"] = args.subcommand
    summary["passed"] = all(summary.get("checks", {}).values())
    write_json(out / f"{args.subcommand.replace('-', '_')}_summary.json", summary)
    if not summary["passed"]:
        failed = [k for k, v in summary["checks"].items() if not v]
        print(f"numerical check failed: {', '.join(failed)}", file=sys.stderr)
        return 2
    return 0


def _numerical_failure(args, out, exc) -> int:
    print(f"numerical check failed: {type(exc).__name__}: {exc}", file=sys.stderr)
    try:
        if out is not None and out.is_dir():
            write_json(out / f"{args.subcommand.replace('-', '_')}_summary.json",
                       {"passed": False, "failure": type(exc).__name__, "message": str(exc)})
    except OSError:
        pass
    return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
