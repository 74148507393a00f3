"""Command-line front end.

Every subcommand reads an optional JSON config (``--config``), applies flag
overrides on top, validates the merged record and writes one JSON document
containing the result, the resolved config and the library version.  Floats
are written with 17 significant digits so identical inputs give
byte-identical output.

Exit codes: 0 success, 2 validation error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import geometry as geo
from .errors import DomainError, MorphforgeError, ValidationError

log = logging.getLogger("morphforge")

# ---------------------------------------------------------------------------
# JSON output
# ---------------------------------------------------------------------------


def _fmt_float(x: float) -> str:
    if not math.isfinite(x):
        return "null"
    return format(x, ".17g")


def dumps(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON text with floats at 17 significant digits; non-finite floats become ``null``."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in seq):
            return "[" + ", ".join(dumps(v, indent, _level + 1) for v in seq) + "]"
        return "[\n" + ",\n".join(pad + dumps(v, indent, _level + 1) for v in seq) + "\n" + end + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(float(obj))
    if isinstance(obj, complex):
        return json.dumps([_fmt_float(obj.real), _fmt_float(obj.imag)])
    return json.dumps(str(obj))


# ---------------------------------------------------------------------------
# plot data
# ---------------------------------------------------------------------------


def _write_csv(path, header, rows) -> Path:
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt_float(float(v)) for v in row])
    except OSError as exc:
        raise OSError(f"cannot write plot data to {path}: {exc}") from exc
    return path


def emit_plot_data(solution, path) -> Path:
    """Write plot-ready CSV for a circle solution, an energy trace or a sphere scan.

    Circle solutions give ``(t, psi)``; energy reports carrying a time trace
    give ``(t, metric_term, second_form_term)``; a mapping with keys ``r``
    and ``psi_bar`` gives ``(r, psi_bar)``.
    """
    from .circlemorph import CircleMorphSolution
    from .energy import EnergyReport

    if isinstance(solution, CircleMorphSolution):
        return _write_csv(path, ["t", "psi"], zip(solution.t, solution.psi))
    if isinstance(solution, EnergyReport):
        if solution.trace is None:
            raise ValidationError("energy report has no time trace to plot")
        tr = solution.trace
        second = tr["second_form_term"] if tr["second_form_term"] is not None else np.zeros_like(tr["t"])
        return _write_csv(path, ["t", "metric_term", "second_form_term"], zip(tr["t"], tr["metric_term"], second))
    if isinstance(solution, dict) and {"r", "psi_bar"} <= set(solution):
        return _write_csv(path, ["r", "psi_bar"], zip(solution["r"], solution["psi_bar"]))
    raise ValidationError(f"no plot data for {type(solution).__name__}")


def sphere_scan(R: float, q: float = 0.0, r_min: float = 0.5, r_max: float = 2.0, n: int = 61) -> dict:
    """Closed-form values of the reduced sphere energy along ``r`` at fixed ``q``."""
    from .spheremorph import psi_bar_closed

    r = np.linspace(r_min, r_max, n)
    return {"r": r, "psi_bar": psi_bar_closed(q, r, R)}


# ---------------------------------------------------------------------------
# spec parsing
# ---------------------------------------------------------------------------


def _kv(spec: str) -> tuple[str, dict]:
    name, _, rest = spec.partition(":")
    params = {}
    for item in filter(None, rest.split(",")):
        key, sep, val = item.partition("=")
        if not sep:
            raise ValidationError(f"expected key=value in {spec!r}, got {item!r}")
        params[key.strip()] = float(val)
    return name.strip(), params


def _take(params: dict, allowed: dict, what: str) -> dict:
    unknown = set(params) - set(allowed)
    if unknown:
        raise ValidationError(f"unknown {what} parameters: {sorted(unknown)}")
    return {k: params.get(k, v) for k, v in allowed.items()}


def manifold_from_spec(spec: str) -> geo.EmbeddedManifold:
    """``circle:R=1,n=256``, ``warped-circle:R=1,n=256,amp=0.3``, ``ellipse:a=2,b=1,n=256``
    ``sphere:R=1,n_theta=64,n_phi=128`` or
    ``warped-sphere:R=1,n_theta=64,n_phi=128,amp_theta=0.2,amp_phi=0.2``."""
    name, params = _kv(spec)
    if name == "circle":
        p = _take(params, {"R": 1.0, "n": 256}, "circle")
        return geo.circle(p["R"], int(p["n"]))
    if name == "warped-circle":
        p = _take(params, {"R": 1.0, "n": 256, "amp": 0.3}, "warped-circle")
        return geo.warped_circle(p["R"], int(p["n"]), p["amp"])
    if name == "ellipse":
        p = _take(params, {"a": 2.0, "b": 1.0, "n": 256}, "ellipse")
        return geo.ellipse(p["a"], p["b"], int(p["n"]))
    if name == "sphere":
        p = _take(params, {"R": 1.0, "n_theta": 64, "n_phi": 128}, "sphere")
        return geo.sphere(p["R"], int(p["n_theta"]), int(p["n_phi"]))
    if name == "warped-sphere":
        p = _take(params, {"R": 1.0, "n_theta": 64, "n_phi": 128, "amp_theta": 0.2, "amp_phi": 0.2}, "warped-sphere")
        return geo.warped_sphere(p["R"], int(p["n_theta"]), int(p["n_phi"]), p["amp_theta"], p["amp_phi"])
    raise ValidationError(f"unknown manifold {name!r}")


def _format_spec(name: str, params: dict) -> str:
    return name + ":" + ",".join(f"{k}={v:.17g}" for k, v in params.items())


_RESOLUTION_DEFAULTS = {
    "circle": {"n": 256},
    "warped-circle": {"n": 256},
    "ellipse": {"n": 256},
    "sphere": {"n_theta": 64, "n_phi": 128},
    "warped-sphere": {"n_theta": 64, "n_phi": 128},
}


def _refined(spec: str, factor: int) -> str:
    """The same manifold spec with every resolution multiplied by ``factor``."""
    name, params = _kv(spec)
    for key, default in _RESOLUTION_DEFAULTS.get(name, {}).items():
        params[key] = params.get(key, default) * factor
    return _format_spec(name, params)


def _scaled(spec: str, R: float) -> str:
    """Spec of the manifold dilated by ``R`` at twice the resolution."""
    name, params = _kv(_refined(spec, 2))
    if name == "ellipse":
        params["a"] = params.get("a", 2.0) * R
        params["b"] = params.get("b", 1.0) * R
    else:
        params["R"] = params.get("R", 1.0) * R
    return _format_spec(name, params)


def _map_from_spec(spec: str, manifold_spec: str, M: geo.EmbeddedManifold):
    """Chart-level map ``h(u)`` and its target.

    ``radial:R=2`` dilates the source embedding by ``R``; ``warp:R=2,eps=0.3``
    sends the chart angle ``u`` of a curve to ``R (cos th, sin th)`` with
    ``th = u + (eps/R) sin u``.
    """
    name, params = _kv(spec)
    if name == "radial":
        R = _take(params, {"R": 2.0}, "radial map")["R"]
        return (lambda u: R * M.chart(u)[0]), manifold_from_spec(_scaled(manifold_spec, R))
    if name == "warp":
        if M.dim != 1:
            raise ValidationError("warp maps are defined on curves only")
        p = _take(params, {"R": 2.0, "eps": 0.3}, "warp map")
        R, eps = p["R"], p["eps"]
        if not abs(eps) < R:
            raise ValidationError("warp map needs |eps| < R to stay a diffeomorphism")

        def h(u):
            th = u[0] + (eps / R) * np.sin(u[0])
            return R * np.stack([np.cos(th), np.sin(th)], -1)

        return h, geo.circle(R, 2 * M.grid.shape[0])
    raise ValidationError(f"unknown map {name!r}")


def _variation_field(M: geo.EmbeddedManifold):
    if M.dim == 1:
        return lambda u: np.sin(u)
    return lambda u: np.stack([np.zeros_like(u[0]), np.cos(u[1])])


def _parse_complex_list(text: str, count: int, what: str) -> list[complex]:
    parts = [s.strip() for s in str(text).split(",")]
    if len(parts) != count:
        raise ValidationError(f"{what} needs {count} comma-separated values")
    try:
        return [complex(p.replace("i", "j")) for p in parts]
    except ValueError as exc:
        raise ValidationError(f"cannot parse {what}: {text!r}") from exc


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

# defaults per command; keys double as the accepted config keys
DEFAULTS = {
    "solve-circle": {"R": None, "A": None, "P": None, "k": 5, "t_samples": 101, "rtol": 1e-10, "cross_tol": 1e-5, "sobolev_n": 513,
                     "sobolev_method": "spectral"},
    "sphere": {"R": None, "mobius": None, "canonical": None, "quadrature": False, "scan": False, "scan_q": 0.0},
    "morph-energy": {"manifold": "circle:R=1,n=256", "target": None, "field": None, "B1": 1.0, "B2": 1.0,
                     "n_time": 16, "rtol": 1e-6, "route": "grid", "rk_tol": 1e-9},
    "bend-energy": {"manifold": "circle:R=1,n=256", "target": None, "field": None, "B1": 1.0, "B2": 1.0,
                    "n_time": 16, "rk_tol": 1e-9},
    "el-check": {"manifold": "circle:R=1,n=64", "map": "radial:R=2", "refine": 2, "eps": 1e-4},
    "sobolev-norm": {"field": None, "k": 5, "n": 129, "n_time": 9, "method": "fd"},
    "admissibility": {"manifold": "circle:R=1,n=256", "target": None, "field": None, "P": None, "k": 5,
                      "n": 129, "n_time": 16, "tol_match": None, "rk_tol": 1e-9},
}
GLOBAL_KEYS = {"out", "csv", "seed"}
POSITIVE = {"rtol", "cross_tol", "rk_tol", "tol_match", "eps", "t_samples", "n_time", "n", "sobolev_n"}


def resolve_config(command: str, file_cfg: dict, overrides: dict) -> dict:
    """Merge defaults, config file and flags; reject unknown keys and non-positive tolerances."""
    allowed = set(DEFAULTS[command]) | GLOBAL_KEYS
    file_cfg = dict(file_cfg)
    file_cfg.pop("command", None)
    unknown = set(file_cfg) - allowed
    if unknown:
        raise ValidationError(f"unknown config keys for {command}: {sorted(unknown)}")
    cfg = {**DEFAULTS[command], "out": None, "csv": None, "seed": 0}
    cfg.update(file_cfg)
    cfg.update({k: v for k, v in overrides.items() if v is not None and k in allowed})
    for key in POSITIVE:
        if cfg.get(key) is not None and not float(cfg[key]) > 0:
            raise ValidationError(f"{key} must be positive, got {cfg[key]}")
    return cfg


def _target_for(cfg: dict, M: geo.EmbeddedManifold, v) -> geo.EmbeddedManifold:
    if cfg.get("target"):
        return manifold_from_spec(cfg["target"])
    params = (cfg.get("field") or {}).get("params", {})
    if cfg["field"].get("family") != "radial":
        raise ValidationError("a target manifold is required unless the field is radial")
    return manifold_from_spec(_scaled(cfg["manifold"], float(params["R"])))


def _field(cfg: dict):
    from .flow import field_from_config

    fc = cfg.get("field")
    if isinstance(fc, str):
        fc = json.loads(fc)
        cfg["field"] = fc
    if not isinstance(fc, dict):
        raise ValidationError("a velocity field config is required (--field JSON or config 'field')")
    return field_from_config(fc)


def cmd_solve_circle(cfg: dict):
    from .circlemorph import A_from_P, solve_circle

    if cfg["R"] is None:
        raise ValidationError("R is required")
    R = float(cfg["R"])
    if not R > 1:
        raise ValidationError(f"R must satisfy R > 1, got R = {R}")
    if (cfg["A"] is None) == (cfg["P"] is None):
        raise ValidationError("give exactly one of A or P")
    A = float(cfg["A"]) if cfg["A"] is not None else A_from_P(
        float(cfg["P"]), R, int(cfg["k"]), int(cfg["sobolev_n"]), cfg["sobolev_method"]
    )
    log.info("solving circle problem R=%g A=%.10g", R, A)
    sol = solve_circle(R, A, int(cfg["t_samples"]), float(cfg["rtol"]), float(cfg["cross_tol"]))
    return sol.to_dict(), sol


def cmd_sphere(cfg: dict):
    from .spheremorph import CanonicalMobius, MobiusMap, reduce, sphere_report

    if cfg["R"] is None:
        raise ValidationError("R is required")
    R = float(cfg["R"])
    if not R > 0:
        raise ValidationError(f"R must be positive, got {R}")
    if (cfg["mobius"] is None) == (cfg["canonical"] is None):
        raise ValidationError("give exactly one of mobius or canonical")
    if cfg["mobius"] is not None:
        a, b, c, d = _parse_complex_list(cfg["mobius"], 4, "mobius")
        can = reduce(MobiusMap(a, b, c, d))
    else:
        q, r = _parse_complex_list(cfg["canonical"], 2, "canonical")
        can = CanonicalMobius(q.real, r.real)
    result = sphere_report(can, R, bool(cfg["quadrature"]))
    plot = sphere_scan(R, float(cfg["scan_q"])) if cfg["scan"] else None
    return result, plot


def cmd_morph_energy(cfg: dict):
    from .energy import EnergyWeights, morphing_energy

    M = manifold_from_spec(cfg["manifold"])
    v = _field(cfg)
    N = _target_for(cfg, M, v)
    log.info("morphing energy on %s (route %s)", cfg["manifold"], cfg["route"])
    rep = morphing_energy(
        v, M, N, EnergyWeights(float(cfg["B1"]), float(cfg["B2"])),
        route=cfg["route"], n_time=int(cfg["n_time"]), rtol=float(cfg["rtol"]), rk_tol=float(cfg["rk_tol"]),
    )
    return rep.to_dict(), rep


def cmd_bend_energy(cfg: dict):
    from .energy import EnergyWeights, bending_energy_E

    M = manifold_from_spec(cfg["manifold"])
    v = _field(cfg)
    N = _target_for(cfg, M, v)
    rep = bending_energy_E(v, M, N, EnergyWeights(float(cfg["B1"]), float(cfg["B2"])),
                           n_time=int(cfg["n_time"]), rk_tol=float(cfg["rk_tol"]))
    return rep.to_dict(), None


def cmd_el_check(cfg: dict):
    from .eleq import el_residual, first_variation, observed_order

    refine = int(cfg["refine"])
    if refine < 0:
        raise ValidationError("refine must be nonnegative")
    maxes, l2s, spacings = [], [], []
    for level in range(refine + 1):
        M = manifold_from_spec(_refined(cfg["manifold"], 2**level) if level else cfg["manifold"])
        hfn, _ = _map_from_spec(cfg["map"], cfg["manifold"], M)
        log.info("el-check level %d: %s nodes", level, M.grid.shape)
        samples = geo.param_map(M, hfn, step=1e-3)
        res = el_residual(geo.first_fundamental_form(M), geo.pullback_metric(samples, M))
        maxes.append(res.max)
        l2s.append(res.l2)
        spacings.append(1.0 / M.grid.shape[0])
    M = manifold_from_spec(cfg["manifold"])
    hfn, N = _map_from_spec(cfg["map"], cfg["manifold"], M)
    fv = first_variation(hfn, _variation_field(M), M, N, eps=float(cfg["eps"]))
    result = {
        "residual_max": maxes[0],
        "residual_l2": l2s[0],
        "residual_max_by_level": maxes,
        "residual_l2_by_level": l2s,
        "refinement_orders": observed_order(maxes, spacings),
        "first_variation": {k: v for k, v in fv.to_dict().items() if k != "eps"},
    }
    return result, None


def cmd_sobolev_norm(cfg: dict):
    from .flow import BoxGrid, sobolev_norm_sq

    v = _field(cfg)
    grid = BoxGrid.covering(v.domain, int(cfg["n"]))
    t_nodes = np.linspace(0.0, 1.0, int(cfg["n_time"]))
    value, err = sobolev_norm_sq(v, int(cfg["k"]), grid, t_nodes, return_error=True, method=cfg["method"])
    return {"norm_sq": value, "norm": math.sqrt(value), "error_estimate": err, "k": int(cfg["k"]), "method": cfg["method"]}, None


def cmd_admissibility(cfg: dict):
    from .flow import BoxGrid, admissibility_check

    if cfg["P"] is None:
        raise ValidationError("P is required")
    M = manifold_from_spec(cfg["manifold"])
    v = _field(cfg)
    N = _target_for(cfg, M, v)
    rep = admissibility_check(
        v, M, N, float(cfg["P"]), int(cfg["k"]),
        grid=BoxGrid.covering(v.domain, int(cfg["n"])),
        n_time=int(cfg["n_time"]), tol_match=cfg["tol_match"], rk_tol=float(cfg["rk_tol"]),
    )
    return rep.to_dict(), None


COMMANDS = {
    "solve-circle": cmd_solve_circle,
    "sphere": cmd_sphere,
    "morph-energy": cmd_morph_energy,
    "bend-energy": cmd_bend_energy,
    "el-check": cmd_el_check,
    "sobolev-norm": cmd_sobolev_norm,
    "admissibility": cmd_admissibility,
}


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="morphforge", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"morphforge {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override its fields")
    common.add_argument("--out", help="write the JSON result here instead of standard output")
    common.add_argument("--csv", help="write plot-ready CSV data here")
    common.add_argument("--seed", type=int, help="random seed recorded in the output")
    common.add_argument("--quiet", action="store_true", help="suppress progress on standard error")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve-circle", parents=[common], help="minimal circle morph")
    p.add_argument("--R", type=float)
    p.add_argument("--A", type=float)
    p.add_argument("--P", type=float)
    p.add_argument("--k", type=int)
    p.add_argument("--t-samples", dest="t_samples", type=int)
    p.add_argument("--sobolev-n", dest="sobolev_n", type=int)
    p.add_argument("--sobolev-method", dest="sobolev_method", choices=["fd", "spectral"])
    p.add_argument("--rtol", type=float)
    p.add_argument("--cross-tol", dest="cross_tol", type=float)

    p = sub.add_parser("sphere", parents=[common], help="Mobius deformation energy on the sphere")
    p.add_argument("--R", type=float)
    p.add_argument("--mobius", help="a,b,c,d (complex, e.g. 1+2j)")
    p.add_argument("--canonical", help="q,r")
    p.add_argument("--quadrature", action="store_true", default=None)
    p.add_argument("--scan", action="store_true", default=None, help="emit an r-scan at fixed q to --csv")
    p.add_argument("--scan-q", dest="scan_q", type=float)

    for name, helptext in (("morph-energy", "morphing distortion energy"), ("bend-energy", "bending distortion energy")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--manifold")
        p.add_argument("--target")
        p.add_argument("--field", help="velocity field config as JSON text")
        p.add_argument("--B1", type=float)
        p.add_argument("--B2", type=float)
        p.add_argument("--n-time", dest="n_time", type=int)
        p.add_argument("--rk-tol", dest="rk_tol", type=float)
        if name == "morph-energy":
            p.add_argument("--rtol", type=float)
            p.add_argument("--route", choices=["grid", "transport"])

    p = sub.add_parser("el-check", parents=[common], help="Euler-Lagrange residual and first variation")
    p.add_argument("--manifold")
    p.add_argument("--map")
    p.add_argument("--refine", type=int)
    p.add_argument("--eps", type=float)

    p = sub.add_parser("sobolev-norm", parents=[common], help="grid Sobolev norm of a velocity field")
    p.add_argument("--field")
    p.add_argument("--k", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--n-time", dest="n_time", type=int)
    p.add_argument("--method", choices=["fd", "spectral"])

    p = sub.add_parser("admissibility", parents=[common], help="admissibility of a velocity field")
    p.add_argument("--manifold")
    p.add_argument("--target")
    p.add_argument("--field")
    p.add_argument("--P", type=float)
    p.add_argument("--k", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--n-time", dest="n_time", type=int)
    p.add_argument("--tol-match", dest="tol_match", type=float)
    p.add_argument("--rk-tol", dest="rk_tol", type=float)
    return parser


def _envelope(command: str, cfg: dict) -> dict:
    return {
        "command": command,
        "version": __version__,
        "config": cfg,
        "environment": {"MORPHFORGE_THREADS": os.environ.get("MORPHFORGE_THREADS")},
    }


def run(command: str, cfg: dict) -> tuple[int, dict, object]:
    """Execute ``command`` with a resolved config; return ``(exit_code, document, plot_source)``."""
    doc = _envelope(command, cfg)
    try:
        result, plot = COMMANDS[command](cfg)
    except (ValidationError, DomainError) as exc:
        doc.update(error=type(exc).__name__, message=str(exc))
        return 2, doc, None
    except MorphforgeError as exc:
        doc.update(error=type(exc).__name__, message=str(exc))
        return 3, doc, None
    except (ValueError, KeyError, TypeError) as exc:
        doc.update(error="ValidationError", message=f"{type(exc).__name__}: {exc}")
        return 2, doc, None
    doc["result"] = result
    return 0, doc, plot


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s", stream=sys.stderr)
    overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config", "quiet")}
    try:
        file_cfg = json.loads(Path(args.config).read_text()) if args.config else {}
        if not isinstance(file_cfg, dict):
            raise ValidationError("config file must hold a JSON object")
        cfg = resolve_config(args.command, file_cfg, overrides)
    except (ValidationError, ValueError, OSError) as exc:
        doc = _envelope(args.command, {})
        doc.update(error="ValidationError", message=str(exc))
        sys.stdout.write(dumps(doc) + "\n")
        return 2
    code, doc, plot = run(args.command, cfg)
    text = dumps(doc) + "\n"
    if cfg.get("out"):
        Path(cfg["out"]).write_text(text)
    else:
        sys.stdout.write(text)
    if code == 0 and cfg.get("csv") and plot is not None:
        path = emit_plot_data(plot, cfg["csv"])
        log.info("wrote %s", path)
    if code:
        print(f"morphforge: {doc['error']}: {doc['message']}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
