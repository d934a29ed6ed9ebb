"""Command-line front end: ``soslab <subcommand> [flags]``.

Every run writes its results, plus a ``manifest.json``, into ``--out``.
Exit codes: 0 ok, 2 configuration error, 3 resource cap, 4 numerical failure.
Errors are also reported on stderr as a JSON envelope.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import EXACT_WHAT, METRICS, SUBCOMMANDS, ConfigError, ExperimentConfig
from .lattice import GeometryError, constant_boundary, parse_region
from .measure import MOVE_SETS, ParameterError, Params

EXIT_OK, EXIT_CONFIG, EXIT_RESOURCE, EXIT_NUMERICAL = 0, 2, 3, 4


# ---------------------------------------------------------------------------
# argument parsing


def _grid(text: str) -> list[float]:
    """``a,b,c`` or ``geom:lo:hi:n`` or ``lin:lo:hi:n``."""
    if text.startswith(("geom:", "lin:")):
        kind, lo, hi, n = text.split(":")
        f = np.geomspace if kind == "geom" else np.linspace
        return [float(x) for x in f(float(lo), float(hi), int(n))]
    return [float(x) for x in text.split(",") if x.strip()]


def _ceiling(text: str):
    # inf is kept as a float here so that it differs from "flag not given"
    return math.inf if text.lower() in ("inf", "none") else float(text)


def _common(p: argparse.ArgumentParser) -> None:
    # every default is None so that only flags given on the command line override a config file
    p.add_argument("--config", help="JSON config file; flags override its entries")
    p.add_argument("--region", help="box:N, annulus:N:M, torus:N, site, or a JSON object")
    p.add_argument("--beta", type=float)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--lambda-grid", dest="lambda_grid", type=_grid, help="a,b,c | geom:lo:hi:n | lin:lo:hi:n")
    p.add_argument("--ceiling", type=_ceiling, help="integer or 'inf'")
    p.add_argument("--height", type=int, help="constant boundary height")
    p.add_argument("--signing", choices=("plus", "minus", "pinned", "free"))
    p.add_argument("--kernel", choices=MOVE_SETS)
    p.add_argument("--seed", type=int)
    p.add_argument("--reps", type=int)
    p.add_argument("--out")
    p.add_argument("--report", action="store_true", default=None, help="also render figures")
    p.add_argument("--allow-large-field", dest="allow_large_field", action="store_true", default=None,
                   help="accept lambda > 1")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="soslab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"soslab {__version__}")
    sub = ap.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("exact", help="exact quantities of an enumerable instance")
    _common(p)
    p.add_argument("--what", choices=EXACT_WHAT)

    p = sub.add_parser("simulate", help="Glauber dynamics time series")
    _common(p)
    p.add_argument("--t-horizon", dest="t_horizon", type=float)
    p.add_argument("--t-burn", dest="t_burn", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--observable")
    p.add_argument("--start", help="floor, ceiling or an integer height")
    p.add_argument("--censor-file", dest="censor_file", help="JSON list of [t_end, sites|null, a, b]")

    p = sub.add_parser("scan-lambda", help="metric against lambda")
    _common(p)
    p.add_argument("--metric", choices=METRICS)
    p.add_argument("--escape-r", dest="escape_r", type=int)
    p.add_argument("--t-max", dest="t_max", type=float)

    p = sub.add_parser("bottleneck", help="bottleneck ratios of A_r on an enumerable instance")
    _common(p)
    p.add_argument("--k", type=int)
    p.add_argument("--r-values", dest="r_values", type=_grid)
    p.add_argument("--field-file", dest="field_file", help="CSV x,y,height; report A_r membership instead")

    p = sub.add_parser("layers", help="height histogram, components and level loops")
    _common(p)
    p.add_argument("--k", type=int)
    p.add_argument("--t-horizon", dest="t_horizon", type=float)
    p.add_argument("--start")
    p.add_argument("--field-file", dest="field_file")

    p = sub.add_parser("contour-dump", help="contours of a height field as JSON lines")
    _common(p)
    p.add_argument("--t-horizon", dest="t_horizon", type=float)
    p.add_argument("--start")
    p.add_argument("--field-file", dest="field_file")
    return ap


_NOT_CONFIG = {"config"}


def parse_config(argv=None) -> ExperimentConfig:
    """Flags (and an optional JSON config file) to a validated config."""
    ns = build_parser().parse_args(argv)
    d: dict = {}
    if ns.config:
        try:
            d = json.loads(Path(ns.config).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError("config", str(e)) from None
        if not isinstance(d, dict):
            raise ConfigError("config", "top level must be an object")
        if d.get("subcommand", ns.subcommand) != ns.subcommand:
            raise ConfigError("subcommand", "differs between config file and command line")
    for k, v in vars(ns).items():
        if k in _NOT_CONFIG or v is None:
            continue
        d[k] = v
    if d.get("ceiling") == math.inf:
        d["ceiling"] = None
    if "lam" in d and "lambda_grid" in d and d["lam"] is not None and d["lambda_grid"] is not None:
        raise ConfigError("lambda", "--lambda and --lambda-grid are mutually exclusive")
    return ExperimentConfig.from_dict(d)


# ---------------------------------------------------------------------------
# file helpers (single writer per path)


class Outputs:
    def __init__(self, root: str):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.files: dict[str, str] = {}

    def _record(self, name: str, data: bytes) -> Path:
        path = self.root / name
        path.write_bytes(data)
        self.files[name] = hashlib.sha256(data).hexdigest()
        return path

    def json(self, name: str, obj) -> Path:
        return self._record(name, (json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n").encode())

    def csv(self, name: str, header, rows) -> Path:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) for x in r])
        return self._record(name, buf.getvalue().encode())

    def text(self, name: str, s: str) -> Path:
        return self._record(name, s.encode())

    def figure(self, name: str, fn, *a, **kw) -> Path:
        path = fn(*a, path=self.root / name, **kw)
        self.files[name] = hashlib.sha256(Path(path).read_bytes()).hexdigest()
        return path


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, np.integer):
        return int(x)
    return x


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (set, frozenset, tuple)):
        return list(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def _clean(x: float):
    """JSON has no inf/nan; use null."""
    return None if x is None or not math.isfinite(x) else float(x)


def read_field(path: str, V) -> np.ndarray:
    """Read a ``x,y,height`` CSV (extra leading columns such as ``rep`` keep only the first rep)."""
    phi = np.full(len(V), np.iinfo(np.int64).min, dtype=np.int64)
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        for row in rd:
            if "rep" in row and int(row["rep"]) != 0:
                continue
            s = (int(row["x"]), int(row["y"]))
            if s not in V:
                raise ConfigError("field_file", f"site {s} is not in the region")
            phi[V.pos(s)] = int(row["height"])
    if np.any(phi == np.iinfo(np.int64).min):
        raise ConfigError("field_file", "some sites of the region have no height")
    return phi


# ---------------------------------------------------------------------------
# subcommands


def _setup(cfg: ExperimentConfig):
    V = parse_region(cfg.region)
    ceiling = math.inf if cfg.ceiling is None else cfg.ceiling
    bd = constant_boundary(V, cfg.height, "free" if V.periodic else cfg.signing, ceiling)
    p = Params(cfg.beta, cfg.lam if cfg.lam is not None else 0.0, allow_large_field=True)
    return V, bd, p


def _start(cfg):
    s = cfg.start
    return int(s) if isinstance(s, str) and s.lstrip("-").isdigit() else s


def cmd_exact(cfg: ExperimentConfig, out: Outputs) -> dict:
    from .exact import (ExactModel, cheeger, cheeger_exact, congestion, elementary_partition_function,
                        partition_family, partition_function, renormalized_partition_function, spectral_gap,
                        tv_marginal_distance)

    V, bd, p = _setup(cfg)
    res: dict = {"what": cfg.what}
    H = None if cfg.ceiling is None else int(cfg.ceiling)
    if cfg.what in ("Z", "Zel"):
        fn = partition_function if cfg.what == "Z" else elementary_partition_function
        v = fn(V, cfg.signing, cfg.height, p, H)
        res.update(log=_clean(v.log), log_upper=_clean(v.log_upper), ceiling=H)
    elif cfg.what in ("Zrn", "Ztr"):
        v = renormalized_partition_function(V, cfg.signing, cfg.height, p, H, "rn" if cfg.what == "Zrn" else "tr")
        res.update(log=_clean(v.log), tail_bound=v.tail_bound, n_contours=v.n_contours, ceiling=H)
    elif cfg.what == "family":
        fam = partition_family(V, cfg.signing, cfg.height, p, H)
        res.update({k: _clean(v) if isinstance(v, float) else v for k, v in vars(fam).items()})
    elif cfg.what == "tv":
        # centre-site marginals under boundary heights h and h + 1
        m1 = ExactModel(bd, p, kernel=cfg.kernel)
        m2 = ExactModel(constant_boundary(V, cfg.height + 1, cfg.signing, H), p, kernel=cfg.kernel)
        c = np.array(V.sites).mean(axis=0)
        centre = V.sites[int(np.argmin(np.abs(np.array(V.sites) - c).max(axis=1)))]
        res.update(tv=tv_marginal_distance(m1, m2, [centre]), window=[list(centre)])
    else:
        m = ExactModel(bd, p, kernel=cfg.kernel)
        res["n_states"] = len(m)
        if cfg.what == "mean_height":
            res["mean_height"] = m.expectation(lambda s: s.mean(axis=1))
        elif cfg.what == "gap":
            g = spectral_gap(m)
            res.update(gap=g.gap, residual=g.residual, method=g.method)
        elif cfg.what == "cheeger":
            phi, A = cheeger(m, "all_subsets") if len(m) <= 22 else cheeger_exact(m)
            res.update(phi_star=phi, set_size=int(np.sum(A)))
        elif cfg.what == "congestion":
            res["congestion"] = congestion(m)
            res["inverse_gap"] = 1.0 / spectral_gap(m).gap
    out.json("exact.json", res)
    return res


def cmd_simulate(cfg: ExperimentConfig, out: Outputs) -> dict:
    from .sim import OBSERVABLES, CensorSchedule, batch_means, make_chain, run, sample_path

    V, bd, p = _setup(cfg)
    if cfg.observable not in OBSERVABLES:
        raise ConfigError("observable", f"must be one of {sorted(OBSERVABLES)}")
    f = OBSERVABLES[cfg.observable]
    sched = None
    if cfg.censor_file:
        try:
            sched = CensorSchedule.from_list(json.loads(Path(cfg.censor_file).read_text()))
        except (OSError, json.JSONDecodeError, TypeError, ValueError) as e:
            raise ConfigError("censor_file", str(e)) from None
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.reps)
    series, finals, summ = [], [], []
    for r in range(cfg.reps):
        ch = make_chain(bd, p, _start(cfg), seed=seeds[r], kernel=cfg.kernel)
        if cfg.t_burn > 0:
            ch = run(ch, cfg.t_burn)
        ch, times, S = sample_path(ch, ch.clock + cfg.t_horizon, cfg.dt, schedule=sched)
        y = f(S)
        series.append((times, y))
        finals.append(ch.field)
        nb = min(20, max(2, len(y) // 10))
        m, se = batch_means(y, nb) if len(y) >= 2 * nb else (float(np.mean(y)) if len(y) else math.nan, math.nan)
        summ.append({"rep": r, "mean": _clean(m), "batch_se": _clean(se)})
    out.csv("series.csv", ("rep", "t", cfg.observable),
            ((r, t, v) for r, (ts, ys) in enumerate(series) for t, v in zip(ts, ys)))
    out.csv("final.csv", ("rep", "x", "y", "height"),
            ((r, x, y, int(h)) for r, phi in enumerate(finals) for (x, y), h in zip(V.sites, phi)))
    allv = np.concatenate([ys for _, ys in series]) if series else np.zeros(0)
    res = {"observable": cfg.observable, "reps": summ,
           "pooled_mean": _clean(float(allv.mean())) if len(allv) else None}
    out.json("summary.json", res)
    if cfg.report:
        from .report import plot_field, plot_series

        if series and len(series[0][0]):
            out.figure("series.png", plot_series, series[0][0], np.array([ys for _, ys in series]),
                       ylabel=cfg.observable)
        out.figure("final_field.png", plot_field, finals[0], V, title="final field, rep 0")
    return res


def cmd_scan(cfg: ExperimentConfig, out: Outputs) -> dict:
    from .lab import SWEEP_HEADER, lambda_sweep, window

    V = parse_region(cfg.region)
    ceiling = math.inf if cfg.ceiling is None else cfg.ceiling
    rows = lambda_sweep(V, cfg.beta, cfg.lambda_grid, cfg.metric, ceiling=ceiling, bd_level=cfg.height,
                        n_reps=cfg.reps, seed=cfg.seed, kernel=cfg.kernel, escape_r=cfg.escape_r,
                        t_max=cfg.t_max)
    out.csv("scan.csv", SWEEP_HEADER, ((r.lam, r.metric, r.err_lo, r.err_hi, r.window_id) for r in rows))
    res = {"metric": cfg.metric, "n_points": len(rows),
           "windows": [list(window(i, cfg.beta)) for i in range(3)]}
    out.json("summary.json", res)
    if cfg.report:
        from .report import plot_sweep

        out.figure("scan.png", plot_sweep, rows, cfg.beta, ylabel=cfg.metric)
    return res


def cmd_bottleneck(cfg: ExperimentConfig, out: Outputs) -> dict:
    from .exact import ExactModel
    from .lab import bottleneck_set, phi_star_scan

    V, bd, p = _setup(cfg)
    if cfg.field_file:
        phi = read_field(cfg.field_file, V)
        geo = "torus" if V.periodic else "zero_bc"
        res = {"k": cfg.k, "membership": [
            {"r": r, **vars(bottleneck_set(phi, V, cfg.k, r, geo))} for r in cfg.r_values]}
        out.json("bottleneck.json", res)
        return res
    m = ExactModel(bd, p, kernel=cfg.kernel)
    s = phi_star_scan(m, cfg.k, cfg.r_values)
    res = {"k": cfg.k, "r_values": list(s.r_values), "phi": [_clean(x) for x in s.phi], "mass": list(s.mass),
           "phi_star": _clean(s.phi_star) if s.phi_star is not None else None, "gap": s.gap,
           "cheeger_ok": s.cheeger_ok()}
    out.json("bottleneck.json", res)
    if cfg.report:
        from .report import plot_phi_scan

        out.figure("bottleneck.png", plot_phi_scan, s.r_values, s.phi, s.gap)
    return res


def _fields_for(cfg, V, bd, p):
    from .sim import make_chain, run

    if cfg.field_file:
        return [read_field(cfg.field_file, V)]
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.reps)
    return [run(make_chain(bd, p, _start(cfg), seed=seeds[r], kernel=cfg.kernel), cfg.t_horizon).field
            for r in range(cfg.reps)]


def cmd_layers(cfg: ExperimentConfig, out: Outputs) -> dict:
    from .lab import layer_report

    V, bd, p = _setup(cfg)
    phis = _fields_for(cfg, V, bd, p)
    reps = [layer_report(phi, V, cfg.k).to_json() for phi in phis]
    res = {"k": cfg.k, "reps": reps}
    out.json("layers.json", res)
    if cfg.report:
        from .report import plot_field, plot_histogram

        out.figure("layers_field.png", plot_field, phis[0], V, title=f"k = {cfg.k}")
        out.figure("layers_hist.png", plot_histogram, np.array(reps[0]["heights"]), np.array(reps[0]["fractions"]))
    return res


def cmd_contours(cfg: ExperimentConfig, out: Outputs) -> dict:
    from .contours import extract_contours

    V, bd, p = _setup(cfg)
    phi = _fields_for(cfg, V, bd, p)[0]
    coll = extract_contours(phi, V, cfg.height)
    txt = coll.to_jsonl()
    out.text("contours.jsonl", txt + ("\n" if txt else ""))
    res = {"n_contours": len(coll.contours), "admissible": coll.admissible}
    out.json("summary.json", res)
    if cfg.report:
        from .report import plot_field

        out.figure("contours.png", plot_field, phi, V, title="contours", contours=coll.ordered())
    return res


COMMANDS = {"exact": cmd_exact, "simulate": cmd_simulate, "scan-lambda": cmd_scan,
            "bottleneck": cmd_bottleneck, "layers": cmd_layers, "contour-dump": cmd_contours}
assert set(COMMANDS) == set(SUBCOMMANDS)


# ---------------------------------------------------------------------------
# running


def _threads() -> int | None:
    v = os.environ.get("SOS_LAB_THREADS")
    if v is None:
        return None
    try:
        n = int(v)
    except ValueError:
        raise ConfigError("SOS_LAB_THREADS", "must be a positive integer") from None
    if n < 1:
        raise ConfigError("SOS_LAB_THREADS", "must be a positive integer")
    import numba

    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
    return n


def run_experiment(cfg: ExperimentConfig, argv=None) -> dict:
    """Run one configured experiment and write its artifacts and manifest."""
    threads = _threads()
    t0 = time.perf_counter()
    out = Outputs(cfg.out)
    out.json("config.json", cfg.to_dict())
    res = COMMANDS[cfg.subcommand](cfg, out)
    manifest = {
        "config": cfg.to_dict(), "config_hash": cfg.digest(), "seed": cfg.seed, "version": __version__,
        "wall_time_s": round(time.perf_counter() - t0, 3), "files": dict(sorted(out.files.items())),
        "threads": threads, "argv": argv,
    }
    (out.root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return res


def _exit_code(e: BaseException) -> int:
    from .exact import ConvergenceError, ReducibleChainError, RegimeError, ResourceError
    from .contours import ContourError
    from .lab import BracketError
    from .sim import InsufficientSamplesError

    if isinstance(e, (ConfigError, GeometryError, ParameterError, ContourError)):
        return EXIT_CONFIG
    if isinstance(e, ResourceError):
        return EXIT_RESOURCE
    if isinstance(e, (ConvergenceError, ReducibleChainError, RegimeError, BracketError,
                      InsufficientSamplesError, ArithmeticError, np.linalg.LinAlgError)):
        return EXIT_NUMERICAL
    return 1


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        cfg = parse_config(argv)
        res = run_experiment(cfg, argv)
    except SystemExit as e:  # argparse
        return EXIT_CONFIG if e.code not in (0, None) else EXIT_OK
    except Exception as e:  # noqa: BLE001 - every failure gets an envelope
        code = _exit_code(e)
        if code == 1:
            raise
        env = {"error": {"code": code, "type": type(e).__name__, "message": str(e),
                         "field": getattr(e, "field", None)}}
        print(json.dumps(env), file=sys.stderr)
        return code
    print(json.dumps(res, default=_jsonable, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
