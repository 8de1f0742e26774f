"""Command-line driver: ``lllplasma <subcommand> [options]``.

Settings come from an optional INI file (``--config``) with sections
``[params]``, ``[sampler]``, ``[grid]`` and ``[run]``; command-line flags
override it. Every run writes a ``manifest.json`` next to its data files.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import logging
import math
import os
import sys
import time
from importlib import metadata
from pathlib import Path

import numpy as np

from .errors import ConvergenceError, DomainError, IntegrityError, LLLPlasmaError
from .params import ModelParams

log = logging.getLogger("lllplasma")

CSV_VERSION = "1"
OUTDIR_ENV = "LLLPLASMA_OUTDIR"
EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2

# (section, key, type) for every setting a config file may carry
_SETTINGS = {
    "params": {"N": int, "m": int, "omega": float, "k": float, "g": float, "T": float},
    "sampler": {"sweeps": int, "burnin": int, "thinning": int, "batches": int, "step": float, "seed": int},
    "grid": {"bins": int, "tol": float},
    "run": {"outdir": str},
}


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


class UsageError(Exception):
    pass


def _fmt(v) -> str:
    if v is None:
        return "nan"
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return repr(float(v))


def write_table(path: Path, columns: dict) -> None:
    """CSV with a versioned header comment; floats via repr, so locale-free and exact."""
    names = list(columns)
    rows = zip(*columns.values())
    with open(path, "w", newline="", encoding="ascii") as fh:
        fh.write(f"# lllplasma-csv v{CSV_VERSION} columns={','.join(names)}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    return obj


# -- configuration


def _common_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("model")
    g.add_argument("--N", type=int)
    g.add_argument("--m", type=int)
    g.add_argument("--omega", type=float)
    g.add_argument("--k", type=float)
    g.add_argument("--g", type=float)
    g.add_argument("--T", type=float, help="plasma temperature (default 1/N)")
    s = p.add_argument_group("sampling")
    s.add_argument("--sweeps", type=int, help="production sweeps")
    s.add_argument("--burnin", type=int)
    s.add_argument("--thinning", type=int)
    s.add_argument("--batches", type=int)
    s.add_argument("--step", type=float, help="initial proposal width")
    s.add_argument("--seed", type=int)
    p.add_argument("--bins", type=int, help="radial bins")
    p.add_argument("--tol", type=float, help="mean-field residual tolerance")
    p.add_argument("--config", type=Path, help="INI file; flags override it")
    p.add_argument("--outdir", type=Path, help=f"output directory (default ${OUTDIR_ENV} or .)")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = argparse.ArgumentParser(prog="lllplasma", description="Quasi-hole plasma toolkit")
    parser.add_argument("--version", action="version", version=_version())
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("meanfield", parents=[common], help="mean-field minimizer and reference profiles")
    sp = sub.add_parser("sample", parents=[common], help="Monte Carlo radial density")
    sp.add_argument("--positions", action="store_true", help="also store the final configuration")
    ed = sub.add_parser("ed", parents=[common], help="exact diagonalization sector scan")
    ed.add_argument("--L-min", dest="L_min", type=int, default=0)
    ed.add_argument("--L-max", dest="L_max", type=int, help="default N(N-1) + 4")
    ed.add_argument("--laughlin", action="store_true", help="also dump the Laughlin kernel vector")
    en = sub.add_parser("energy", parents=[common], help="trial-state energy report")
    en.add_argument("--mc", action="store_true", help="Monte Carlo instead of the mean-field fast path")
    ph = sub.add_parser("phase-diagram", parents=[common], help="vortex phase diagram over omega")
    ph.add_argument("--omega-min", dest="omega_min", type=float, required=True)
    ph.add_argument("--omega-max", dest="omega_max", type=float, required=True)
    ph.add_argument("--n-omega", dest="n_omega", type=int, default=101)
    ph.add_argument("--mc", action="store_true", help="refine every point by Monte Carlo")
    return parser


def _read_config(path: Path | None) -> dict:
    if path is None:
        return {}
    cp = configparser.ConfigParser()
    cp.optionxform = str  # keep N and T upper-case
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    out = {}
    for section in cp.sections():
        if section not in _SETTINGS:
            raise UsageError(f"unknown config section [{section}]")
        for key, raw in cp.items(section):
            kind = _SETTINGS[section].get(key)
            if kind is None:
                raise UsageError(f"unknown config key {section}.{key}")
            try:
                out[key] = kind(raw)
            except ValueError as exc:
                raise UsageError(f"bad value for {section}.{key}: {raw!r}") from exc
    return out


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults, config file and flags (flags win) into a flat settings dict."""
    cfg = {
        "N": None, "m": 0, "omega": 0.0, "k": 0.0, "g": 0.0, "T": None,
        "sweeps": 10000, "burnin": 1000, "thinning": 1, "batches": 32, "step": None, "seed": 0,
        "bins": None, "tol": 1e-10, "outdir": os.environ.get(OUTDIR_ENV, "."),
    }
    cfg.update(_read_config(args.config))
    for key in cfg:
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = v
    for key in ("L_min", "L_max", "omega_min", "omega_max", "n_omega", "mc", "positions", "laughlin"):
        if hasattr(args, key):
            cfg[key] = getattr(args, key)
    if cfg["N"] is None:
        raise UsageError("N is required (flag --N or [params] N)")
    cfg["outdir"] = str(cfg["outdir"])
    cfg["command"] = args.command
    return cfg


def config_hash(cfg: dict) -> str:
    """sha256 over the canonical JSON of the settings that determine the output."""
    semantic = {k: v for k, v in cfg.items() if k != "outdir"}
    blob = json.dumps(_jsonable(semantic), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _params(cfg) -> ModelParams:
    return ModelParams(N=cfg["N"], m=cfg["m"], omega=cfg["omega"], k=cfg["k"], g=cfg["g"], T=cfg["T"])


def _sampler(cfg):
    from .plasma_mc import SamplerConfig

    return SamplerConfig(step_size=cfg["step"], n_burnin=cfg["burnin"], n_samples=cfg["sweeps"],
                         thinning=cfg["thinning"], seed=cfg["seed"], n_batches=cfg["batches"])


# -- subcommands; each returns (diagnostics, constants, files)


def _run_meanfield(cfg, params, out):
    from .meanfield import (calibrate_decay, decay_envelope, electrostatic_profile, functional_energies,
                            mf_minimize, thermal_profile)
    from .radial_measures import default_grid

    grid = default_grid(params, cfg["bins"]) if cfg["bins"] else default_grid(params)
    sol = mf_minimize(params, tol=cfg["tol"], grid=grid)
    el = electrostatic_profile(params, grid)
    th = thermal_profile(params, grid)
    f = functional_energies(params, sol.density)
    consts = calibrate_decay(params, sol.density)
    write_table(out / "profile.csv", {"r": grid.nodes, "rho_mf": sol.density.values,
                                      "rho_el": el.values, "rho_th": th.values,
                                      "envelope": decay_envelope(params, grid.nodes, consts)})
    diag = {"iterations": sol.iterations, "residual": sol.residual, "E_MF": f.E_MF, "E_el": f.E_el,
            "E_th": f.E_th, "lagrange_constant": sol.lagrange_constant}
    return diag, {"decay": consts.to_dict()}, ["profile.csv"]


def _run_sample(cfg, params, out):
    from .meanfield import (calibrate_decay, decay_envelope, electrostatic_profile, mf_minimize,
                            thermal_profile)
    from .plasma_mc import Chain, estimation_grid

    grid = estimation_grid(params, cfg["bins"]) if cfg["bins"] else estimation_grid(params)
    chain = Chain(params, _sampler(cfg))
    est, _, _ = chain.sample(grid)
    consts = calibrate_decay(params, mf_minimize(params, tol=cfg["tol"]).density)
    write_table(out / "density.csv", {
        "r": grid.nodes, "density": est.density, "stderr": est.stderr,
        "rho_el": electrostatic_profile(params, grid).values, "rho_th": thermal_profile(params, grid).values,
        "envelope": decay_envelope(params, grid.nodes, consts), "undersampled": est.undersampled,
    })
    files = ["density.csv"]
    if cfg.get("positions"):
        pos = chain.config.positions
        write_table(out / "positions.csv", {"x": pos[:, 0], "y": pos[:, 1]})
        files.append("positions.csv")
    diag = dict(est.diagnostics)
    diag["mean_r2"], diag["mean_r2_stderr"] = est.moment(1)
    return diag, {"decay": consts.to_dict()}, files


def _run_ed(cfg, params, out):
    from .bargmann_ed import gap_sequence, laughlin_vector, sector_spectrum

    N = params.N
    L_max = cfg["L_max"] if cfg["L_max"] is not None else N * (N - 1) + 4
    if cfg["L_min"] < 0 or L_max < cfg["L_min"]:
        raise UsageError("need 0 <= L-min <= L-max")
    specs = [sector_spectrum(N, L) for L in range(cfg["L_min"], L_max + 1)]
    write_table(out / "spectrum.csv", {
        "L": [s.L for s in specs], "dim": [s.basis_dim for s in specs],
        "yrast": [s.ground for s in specs], "kernel_dim": [s.kernel_dim for s in specs],
        "gap": [s.gap for s in specs], "quarantined": [len(s.quarantined) for s in specs],
    })
    table = gap_sequence(N, range(cfg["L_min"], L_max + 1))
    diag = {"sectors": len(specs), "needs_review": [s.L for s in specs if s.needs_review],
            "gap_reference_L": table.reference_L, "gap_conjecture_holds": table.conjecture_holds}
    files = ["spectrum.csv"]
    if cfg.get("laughlin"):
        basis, vec = laughlin_vector(N)
        write_table(out / "laughlin.csv", {
            "occupations": [" ".join(map(str, b.occupations)) for b in basis], "amplitude": vec})
        files.append("laughlin.csv")
    return diag, {}, files


def _run_energy(cfg, params, out):
    from .trial_energy import evaluate_trial_energy, upper_bound

    rep = evaluate_trial_energy(params, params.m, _sampler(cfg) if cfg.get("mc") else None)
    data = rep.to_dict()
    try:
        ub = upper_bound(params)
        data["upper_bound"] = {"case": ub.case, "value": ub.value, "candidates": list(ub.candidates),
                               "condition": ub.condition, "o1_caveat": ub.o1_caveat}
    except LLLPlasmaError as exc:
        data["upper_bound"] = {"error": str(exc)}
    (out / "energy.json").write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")
    consts = data.get("diagnostics", {}).get("decay_constants", {})
    return {"source": rep.source}, {"decay": consts}, ["energy.json"]


def _run_phase(cfg, params, out):
    from .plasma_mc import SamplerConfig
    from .trial_energy import phase_diagram

    if cfg["n_omega"] < 2:
        raise UsageError("n-omega must be >= 2")
    omegas = np.linspace(cfg["omega_min"], cfg["omega_max"], cfg["n_omega"])
    d = phase_diagram(params.N, params.k, omegas, _sampler(cfg) if cfg.get("mc") else None)
    rows = d.rows
    write_table(out / "phase.csv", {
        "omega": [r.omega for r in rows], "m_opt": [r.m_opt for r in rows], "L": [r.L for r in rows],
        "main_term": [r.main_term for r in rows], "bound": [r.bound for r in rows],
        "case": [r.case for r in rows], "regime": [r.regime for r in rows],
    })
    diag = {"laughlin_boundary": d.laughlin_boundary, "thermal_boundary": d.thermal_boundary,
            "closed_forms": d.closed_forms, "grid_step": float(abs(omegas[1] - omegas[0]))}
    return diag, {}, ["phase.csv"]


_COMMANDS = {"meanfield": _run_meanfield, "sample": _run_sample, "ed": _run_ed,
             "energy": _run_energy, "phase-diagram": _run_phase}


def run(cfg: dict) -> int:
    """Execute one resolved configuration; always leaves a manifest behind."""
    out = Path(cfg["outdir"])
    manifest = {"command": cfg["command"], "config": _jsonable(cfg), "config_hash": config_hash(cfg),
                "version": _version(), "status": "error"}
    t0 = time.perf_counter()
    code = EXIT_FAILURE
    try:
        params = _params(cfg)
        out.mkdir(parents=True, exist_ok=True)
        if not os.access(out, os.W_OK):
            raise UsageError(f"output directory {out} is not writable")
        diag, consts, files = _COMMANDS[cfg["command"]](cfg, params, out)
        manifest.update(status="ok", diagnostics=_jsonable(diag), constants=_jsonable(consts), files=files)
        code = EXIT_OK
    except (UsageError, DomainError) as exc:
        manifest["error"] = f"usage: {exc}"
        print(f"lllplasma: error: {exc}", file=sys.stderr)
        code = EXIT_USAGE
    except (IntegrityError, ConvergenceError, ArithmeticError, LLLPlasmaError) as exc:
        manifest["error"] = f"{type(exc).__name__}: {exc}"
        print(f"lllplasma: {type(exc).__name__}: {exc}", file=sys.stderr)
    manifest["wall_clock_s"] = time.perf_counter() - t0
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        print(f"lllplasma: cannot write manifest: {exc}", file=sys.stderr)
        code = code or EXIT_FAILURE
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 on bad flags
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args)
    except UsageError as exc:
        parser.error(str(exc))
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
