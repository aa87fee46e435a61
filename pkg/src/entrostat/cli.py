"""Command-line front end.

Every command writes a metadata header (tool version, resolved config, seed)
followed by data rows. Configuration precedence is CLI flags, then a flat
``key = value`` config file, then built-in defaults.

Exit codes: 0 success, 1 verification failure, 2 usage error, 3 runtime or
convergence error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
from scipy import stats

from . import __version__, analytic, coulomb, moments, sampling
from .core import BipartiteDims, BranchId, DomainError, EntrostatError

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    pass


class RuntimeFailure(Exception):
    """Raised after partial output has been written."""


# ---------------------------------------------------------------------------
# parameter specs and config resolution

@dataclass(frozen=True)
class Param:
    name: str
    type: Callable[[str], Any]
    default: Any = None
    choices: Optional[Sequence[str]] = None
    help: str = ""


COMMON = [
    Param("seed", int, 0, help="64-bit seed for all random streams"),
    Param("workers", int, None, help="worker threads (default: $ENTROSTAT_WORKERS or 1)"),
    Param("out", str, "-", help="output path, '-' for stdout"),
    Param("format", str, "csv", ("csv", "json")),
]

COMMANDS: Dict[str, List[Param]] = {
    "phase-diagram": [
        Param("beta_min", float), Param("beta_max", float), Param("points", int, 101),
        Param("branch", str, "stable", ("stable", "metastable", "both")),
    ],
    "density": [
        Param("beta", float), Param("branch", str, "stable", ("stable", "metastable")),
        Param("grid_points", int, 201),
    ],
    "moments": [
        Param("mode", str, None, ("pure-exact", "pure-asymptotic", "mixed-exact", "gaussian", "high-temp")),
        Param("n", int), Param("m", int), Param("x", float), Param("beta", float),
        Param("t3", float), Param("t4", float), Param("order", int, 2, help="cumulant order (pure-asymptotic)"),
    ],
    "sample": [
        Param("kind", str, None, ("haar-spectrum", "simplex", "purified", "mcmc")),
        Param("n", int), Param("m", int), Param("l", int), Param("samples", int, 10000),
        Param("bins", int, 40), Param("beta_scaled", float, 0.0), Param("steps", int),
        Param("burn_in", int), Param("thin", int), Param("chains", int, 1),
        Param("sidecar", str, None, help="summary JSON path (default: OUT.summary.json)"),
    ],
    "minimize": [
        Param("n", int), Param("beta", float), Param("beta_sweep", str, None, help="lo:hi:step"),
        Param("mu_grid", str, None, help="lo:hi:step, fixed largest eigenvalue profile"),
        Param("max_iter", int, 20000), Param("tol", float, coulomb.GRAD_TOL),
    ],
    "verify": [
        Param("suite", str, "all", ("analytic", "moments", "sampling", "coulomb", "all")),
        Param("budget", str, "quick", ("quick", "full")),
    ],
}

HELP = {
    "phase-diagram": "thermodynamic branches over a beta range",
    "density": "eigenvalue density on a branch support",
    "moments": "exact and approximate purity moments",
    "sample": "random spectra, simplex points, purified states or MCMC chains",
    "minimize": "finite-N Coulomb gas minima, sweeps and fixed-maximum profiles",
    "verify": "run the invariant and acceptance checks",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="entrostat", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"entrostat {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for cmd, params in COMMANDS.items():
        p = sub.add_parser(cmd, help=HELP[cmd])
        for spec in COMMON + params:
            p.add_argument("--" + spec.name.replace("_", "-"), dest=spec.name, type=spec.type,
                           choices=spec.choices, default=None, help=spec.help or None)
        p.add_argument("--config", dest="config", default=None, help="flat key = value config file")
    return parser


def read_config(path: str) -> Dict[str, str]:
    """Parse ``key = value`` lines; '#' starts a comment, blank lines are skipped."""
    out: Dict[str, str] = {}
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config {path!r}: {exc}") from None
    with fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def resolve_config(command: str, args: argparse.Namespace) -> Dict[str, Any]:
    specs = {p.name: p for p in COMMON + COMMANDS[command]}
    cfg = {name: p.default for name, p in specs.items()}
    env_workers = os.environ.get("ENTROSTAT_WORKERS")
    if env_workers:
        try:
            cfg["workers"] = int(env_workers)
        except ValueError:
            raise UsageError(f"ENTROSTAT_WORKERS={env_workers!r} is not an integer") from None
    if args.config:
        for key, raw in read_config(args.config).items():
            if key not in specs:
                raise UsageError(f"unknown config key {key!r} for {command}")
            spec = specs[key]
            try:
                value = spec.type(raw)
            except ValueError:
                raise UsageError(f"config key {key!r}: cannot parse {raw!r}") from None
            if spec.choices and value not in spec.choices:
                raise UsageError(f"config key {key!r}: {raw!r} not in {list(spec.choices)}")
            cfg[key] = value
    for name in specs:
        value = getattr(args, name, None)
        if value is not None:
            cfg[name] = value
    if cfg["workers"] is None:
        cfg["workers"] = 1
    if cfg["workers"] < 1:
        raise UsageError("workers must be >= 1")
    if not (-(2 ** 63) <= cfg["seed"] < 2 ** 64):
        raise UsageError("seed must fit in 64 bits")
    return cfg


def _require(cfg: Dict[str, Any], *names: str) -> None:
    missing = [n for n in names if cfg.get(n) is None]
    if missing:
        raise UsageError("missing parameter(s): " + ", ".join("--" + n.replace("_", "-") for n in missing))


def _parse_range(text: str, name: str) -> np.ndarray:
    try:
        lo, hi, step = (float(s) for s in text.split(":"))
    except ValueError:
        raise UsageError(f"--{name.replace('_', '-')} expects lo:hi:step") from None
    if not (hi > lo and step > 0):
        raise UsageError(f"--{name.replace('_', '-')}: need lo < hi and step > 0")
    count = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return np.round(lo + step * np.arange(count), 12)


# ---------------------------------------------------------------------------
# output

def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None:
        return ""
    return str(v)


def _json_value(v):
    if isinstance(v, (np.floating,)):
        v = float(v)
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    if isinstance(v, dict):
        return {k: _json_value(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json_value(x) for x in v]
    return v


def render(meta: Dict[str, Any], columns: Sequence[str], rows: Sequence[Sequence[Any]], fmt: str) -> str:
    if fmt == "json":
        doc = {"meta": _json_value(meta), "columns": list(columns),
               "rows": [[_json_value(v) for v in r] for r in rows]}
        return json.dumps(doc, indent=None, sort_keys=False) + "\n"
    buf = io.StringIO()
    buf.write("# " + json.dumps(_json_value(meta), sort_keys=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(v) for v in r])
    return buf.getvalue()


def emit(cfg: Dict[str, Any], text: str) -> None:
    if cfg["out"] == "-":
        sys.stdout.write(text)
        sys.stdout.flush()
    else:
        with open(cfg["out"], "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def base_meta(command: str, cfg: Dict[str, Any]) -> Dict[str, Any]:
    return {"tool": "entrostat", "version": __version__, "command": command,
            "seed": cfg["seed"], "config": dict(sorted(cfg.items()))}


# ---------------------------------------------------------------------------
# commands

def cmd_phase_diagram(cfg):
    _require(cfg, "beta_min", "beta_max")
    if not cfg["beta_min"] < cfg["beta_max"]:
        raise UsageError("beta_min must be < beta_max")
    if cfg["points"] < 2:
        raise UsageError("points must be >= 2")
    families = ("stable", "metastable") if cfg["branch"] == "both" else (cfg["branch"],)
    rows = []
    for beta in np.linspace(cfg["beta_min"], cfg["beta_max"], cfg["points"]):
        beta = float(beta)
        for fam in families:
            if beta >= 0:
                p, br, _ = analytic.stable_branch(beta)
                tp, mu = analytic.thermo(p, br), 0.0
            elif fam == "stable":
                p, br, ev = analytic.stable_branch(beta)
                tp, mu = analytic.thermo_negative_stable(beta), ev.mu
            else:
                p, br = analytic.metastable_branch(beta)
                tp, mu = analytic.thermo(p, br), 0.0
            rows.append((beta, fam, p.m_center, p.delta, mu, tp.u, tp.s, tp.beta_f, tp.alpha, br.value))
    cols = ("beta", "branch", "m", "delta", "mu", "u", "s", "beta_f", "alpha", "branch_id")
    return {}, cols, rows


def cmd_density(cfg):
    _require(cfg, "beta")
    if cfg["grid_points"] < 2:
        raise UsageError("grid_points must be >= 2")
    beta = cfg["beta"]
    extra: Dict[str, Any] = {}
    if cfg["branch"] == "metastable":
        if beta >= 0:
            raise UsageError("the metastable branch is defined for beta < 0")
        p, br = analytic.metastable_branch(beta)
    else:
        p, br, ev = analytic.stable_branch(beta)
        if br is BranchId.SEPARABLE:
            # only the sea has a continuum density; the detached eigenvalue is reported apart
            extra["detached_eigenvalue"] = ev.mu
            br = BranchId.WISHART
    a, b = p.m_center - p.delta, p.m_center + p.delta
    lam = np.linspace(a, b, cfg["grid_points"])
    with np.errstate(all="ignore"):
        rho = np.atleast_1d(np.asarray(analytic.density_of_eigenvalues(br, p, lam), dtype=float))
    divergent = []
    if not math.isfinite(rho[0]):
        divergent.append("lower")
        rho[0] = rho[1]
    if not math.isfinite(rho[-1]):
        divergent.append("upper")
        rho[-1] = rho[-2]
    if not np.all(np.isfinite(rho)):
        raise RuntimeFailure("density is not finite inside the support")
    extra.update({"branch_id": br.value, "support": [a, b], "divergent_endpoints": divergent,
                  "m": p.m_center, "delta": p.delta, "beta_branch": p.beta})
    return extra, ("lambda", "rho"), list(zip(lam.tolist(), rho.tolist()))


def cmd_moments(cfg):
    mode = cfg["mode"]
    _require(cfg, "mode")
    values: Dict[str, Any] = {}
    formulas: List[str] = []
    if mode == "pure-exact":
        _require(cfg, "n", "m")
        n, m = cfg["n"], cfg["m"]
        values["K1"] = moments.pure_first_moment(n, m)
        values["K2"] = moments.pure_second_cumulant(n, m)
        formulas += ["K1 = (n+m)/(nm+1)", "K2 = 2(n^2-1)(m^2-1)/((nm+1)^2 (nm+2)(nm+3))"]
    elif mode == "pure-asymptotic":
        _require(cfg, "n")
        values[f"K{cfg['order']}"] = moments.pure_cumulant_asymptotic(cfg["order"], cfg["n"])
        formulas.append("K_k ~ 2^(k+1) (3k-3)! / ((2k)! n^(3k-2)) for n = m")
    elif mode in ("mixed-exact", "gaussian", "high-temp"):
        _require(cfg, "n", "m", "x")
        n, m, x = cfg["n"], cfg["m"], cfg["x"]
        t3, t4 = cfg["t3"], cfg["t4"]
        L = n * m
        if t3 is None and t4 is None and abs(x - 1.0 / L) < 1e-15:
            t3, t4 = 1.0 / L ** 2, 1.0 / L ** 3  # forced by the maximally mixed spectrum
        if mode == "gaussian":
            values["M1"] = moments.gaussian_first_moment(x, n, m)
            formulas.append("M1 ~ 1/n + x/m")
        elif mode == "mixed-exact":
            values["M1"] = moments.mixed_first_moment(x, n, m)
            formulas.append("M1 = (m(n^2-1) x + n(m^2-1)) / (L^2-1)")
            if t3 is not None and t4 is not None:
                values["K2"] = moments.mixed_second_cumulant(x, n, m, t3, t4)
                formulas.append("K2(x; t3, t4) from the degree-4 Weingarten average")
        else:
            _require(cfg, "beta")
            if t3 is None or t4 is None:
                raise UsageError("high-temp needs --t3 and --t4 unless x = 1/(nm)")
            values["M1"] = moments.mixed_first_moment(x, n, m)
            values["K2"] = moments.mixed_second_cumulant(x, n, m, t3, t4)
            values["first_moment"] = moments.high_temp_first_moment(x, cfg["beta"], n, m, t3, t4)
            formulas.append("<pi_A>_beta ~ M1(x) - beta K2(x)")
    meta = {"mode": mode, "values": values, "formulas": formulas}
    return meta, ("quantity", "value"), list(values.items())


def _sample_summary_haar(rows, n, m):
    pur = np.sum(rows ** 2, axis=1)
    k1 = moments.pure_first_moment(n, m)
    se = float(pur.std(ddof=1) / math.sqrt(len(pur)))
    z = (float(pur.mean()) - k1) / se
    return {"mean_purity": float(pur.mean()), "var_purity": float(pur.var(ddof=1)), "stderr": se,
            "target_mean_purity": k1, "z": z, "within_3sigma": abs(z) <= 3}


def cmd_sample(cfg):
    kind = cfg["kind"]
    _require(cfg, "kind")
    base = sampling.RngSpec(cfg["seed"], 0)
    workers = cfg["workers"]
    if cfg["samples"] < 1:
        raise UsageError("samples must be >= 1")
    chunk = 10000
    sizes = [min(chunk, cfg["samples"] - i) for i in range(0, cfg["samples"], chunk)]
    summary: Dict[str, Any]
    if kind == "haar-spectrum":
        _require(cfg, "n", "m")
        dims = BipartiteDims(cfg["n"], cfg["m"])
        parts = sampling.run_chunks(lambda a: sampling.reduced_spectra(dims, a[1], base.child(a[0])),
                                    list(enumerate(sizes)), workers)
        data = np.vstack(parts)
        summary = _sample_summary_haar(data, dims.n, dims.m)
        cols = [f"lambda_{k + 1}" for k in range(data.shape[1])]
    elif kind == "simplex":
        _require(cfg, "l")
        l = cfg["l"]
        parts = sampling.run_chunks(lambda a: sampling.simplex_points(l, a[1], base.child(a[0])),
                                    list(enumerate(sizes)), workers)
        data = np.vstack(parts)
        c0 = data[:, 0]
        se = float(c0.std(ddof=1) / math.sqrt(len(c0)))
        z = (float(c0.mean()) - 1.0 / l) / se
        summary = {"coordinate_mean": float(c0.mean()), "stderr": se, "target": 1.0 / l, "z": z,
                   "within_3sigma": abs(z) <= 3, "coordinate_second_moment": float(np.mean(c0 ** 2)),
                   "target_second_moment": 2.0 / (l * (l + 1))}
        cols = [f"lambda_{k + 1}" for k in range(l)]
    elif kind == "purified":
        _require(cfg, "l")
        l = cfg["l"]
        ens = sampling.purified_mixed_ensemble(l, cfg["samples"], cfg["bins"], rng=base, workers=workers,
                                               chunk=chunk)
        parts = [sampling.purified_samples(l, s, base.child(i), n=ens.n) for i, s in enumerate(sizes)]
        data = np.vstack(parts)
        used = ens.counts >= 10
        pred = np.array([moments.mixed_first_moment(x, ens.n, ens.m) for x in ens.mean_x[used]])
        chi2 = float(np.sum((ens.mean_piA[used] - pred) ** 2 / (ens.var_piA[used] / ens.counts[used])))
        summary = {"binned": ens.to_json(), "chi2_first_moment": chi2, "bins_used": int(used.sum()),
                   "p_value": float(stats.chi2.sf(chi2, int(used.sum()))) if used.any() else None,
                   "mean_x": float(data[:, 0].mean()), "mean_piA": float(data[:, 1].mean())}
        cols = ["x", "pi_A", "tr3", "tr4"]
    else:
        _require(cfg, "n", "steps")
        n = cfg["n"]
        res = sampling.canonical_mcmc_chains(n, cfg["beta_scaled"], cfg["steps"], cfg["chains"], rng=base,
                                             workers=workers, burn_in=cfg["burn_in"], thin=cfg["thin"])
        data = res.samples
        pur = np.sum(data ** 2, axis=1)
        summary = {"acceptance": res.acceptance, "step_size": res.step_size, "burn_in": res.burn_in,
                   "thin": res.thin, "mean_purity": float(pur.mean()), "var_purity": float(pur.var(ddof=1))}
        if cfg["beta_scaled"] >= 0 and len(data) >= 2:
            beta = cfg["beta_scaled"] / n ** 3
            p, br, _ = analytic.stable_branch(beta)
            x = sampling.one_per_spectrum(data, base.child(10 ** 6)) * n

            def cdf(v):
                t = np.clip((np.asarray(v) - p.m_center) / p.delta, -1.0, 1.0)
                return np.array([analytic.tricomi_cdf(p, float(q)) for q in np.atleast_1d(t)])

            ks = stats.kstest(x, cdf)
            summary.update({"ks_reference": br.value, "ks_statistic": float(ks.statistic),
                            "ks_p_value": float(ks.pvalue), "ks_pass": bool(ks.pvalue > 0.01)})
        else:
            summary["ks_reference"] = None
        cols = [f"lambda_{k + 1}" for k in range(n)]
    sidecar = cfg["sidecar"] or (None if cfg["out"] == "-" else cfg["out"] + ".summary.json")
    meta = {"summary_path": sidecar}
    if sidecar is None:
        meta["summary"] = summary
    else:
        with open(sidecar, "w", encoding="utf-8") as fh:
            json.dump(_json_value(summary), fh, indent=2, sort_keys=True)
            fh.write("\n")
    return meta, cols, data.tolist()


def cmd_minimize(cfg):
    _require(cfg, "n")
    n = cfg["n"]
    if n < 2:
        raise UsageError("n must be >= 2")
    if (cfg["beta"] is None) == (cfg["beta_sweep"] is None):
        raise UsageError("give exactly one of --beta and --beta-sweep")
    if cfg["mu_grid"] is not None:
        if cfg["beta"] is None:
            raise UsageError("--mu-grid needs a single --beta")
        grid = _parse_range(cfg["mu_grid"], "mu_grid")
        rows = coulomb.profile_fixed_max(n, cfg["beta"], grid, cfg["max_iter"], cfg["tol"], cfg["workers"])
        minima = [rows[i][0] for i in coulomb.local_minima([r[1] for r in rows])]
        meta = {"local_minima_mu": minima, "unreliable_below_mu": 2.0 / n,
                "all_converged": all(r[2] for r in rows)}
        return meta, ("mu", "beta_f", "converged", "reliable"), rows
    if cfg["beta"] is not None:
        typ, sep = coulomb.basin_minima(n, cfg["beta"], cfg["max_iter"], cfg["tol"])
        found = [typ]
        if sep is not None and abs(sep.lambda_max - typ.lambda_max) > 1e-6:
            found.append(sep)
        rows = [(cfg["beta"], coulomb.basin_label(r, n), r.beta_f, r.lambda_max, r.converged, r.iterations)
                for r in found]
        meta = {"basins": len(rows), "all_converged": all(r[4] for r in rows)}
        return meta, ("beta", "basin", "beta_f", "lambda_max", "converged", "iterations"), rows
    grid = _parse_range(cfg["beta_sweep"], "beta_sweep")
    curve = coulomb.max_eigenvalue_curve(n, grid, cfg["max_iter"], cfg["tol"], cfg["workers"])
    crossing = None
    for left, right in zip(curve, curve[1:]):
        if left.basin == "separable" and right.basin == "typical":
            try:
                crossing = coulomb.locate_crossing(n, left.beta, right.beta, max_iter=cfg["max_iter"])
            except EntrostatError:
                crossing = None
            break
    rows = [(r.beta, r.basin, r.beta_f, r.lambda_max, r.lambda_max_analytic, r.converged, r.iterations)
            for r in curve]
    meta = {"crossing": crossing, "all_converged": all(r.converged for r in curve)}
    return meta, ("beta", "basin", "beta_f", "lambda_max", "lambda_max_analytic", "converged", "iterations"), rows


def cmd_verify(cfg):
    from . import acceptance

    checks = acceptance.run_suite(cfg["suite"], quick=cfg["budget"] == "quick", workers=cfg["workers"])
    for c in checks:
        print(c.line(), file=sys.stderr)
    rows = [(c.key, c.title, c.passed, round(c.seconds, 3), json.dumps(c.to_json()["measured"], sort_keys=True))
            for c in checks]
    meta = {"all_passed": all(c.passed for c in checks), "report": [c.to_json() for c in checks]}
    return meta, ("criterion", "title", "passed", "seconds", "measured"), rows


HANDLERS = {
    "phase-diagram": cmd_phase_diagram,
    "density": cmd_density,
    "moments": cmd_moments,
    "sample": cmd_sample,
    "minimize": cmd_minimize,
    "verify": cmd_verify,
}


RANGE_FLAGS = ("--beta-sweep", "--mu-grid")


def _join_range_flags(argv: Sequence[str]) -> List[str]:
    """Attach range values to their flag so argparse does not read '-3:-1:0.1' as an option."""
    out: List[str] = []
    it = iter(argv)
    for tok in it:
        if tok in RANGE_FLAGS:
            nxt = next(it, None)
            out.append(tok if nxt is None else f"{tok}={nxt}")
        else:
            out.append(tok)
    return out


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    argv = _join_range_flags(sys.argv[1:] if argv is None else argv)
    try:
        args = parser.parse_args(argv)
        cfg = resolve_config(args.command, args)
        extra, cols, rows = HANDLERS[args.command](cfg)
    except UsageError as exc:
        print(f"entrostat: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DomainError as exc:
        print(f"entrostat: invalid parameters: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (EntrostatError, RuntimeFailure) as exc:
        print(f"entrostat: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    meta = base_meta(args.command, cfg)
    meta.update(extra)
    emit(cfg, render(meta, cols, rows, cfg["format"]))
    if args.command == "verify":
        return EXIT_OK if extra["all_passed"] else EXIT_VERIFY
    if extra.get("all_converged") is False:
        print("entrostat: some minimizations did not converge (flagged in output)", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
