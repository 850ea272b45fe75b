"""Command-line front end.

Every command reads an optional JSON config (missing keys take the defaults
of the reference experiment: ``T = 1``, ``eta = c = 1``, ``gamma = e^2``,
``kappa = zeta = 0.25``, supply mean-reverting to ``sin(2 pi t)`` with
``sigma_s = 0.05``, ``q0 = 0.1``, ``M = 11``), writes its outputs to
``--out`` and records a ``manifest.json`` that ``mfgprice rerun`` can replay.

Exit codes: 0 success, 2 configuration error, 3 solver error, 4 I/O error.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .calibrate import MarketDataset, calibrate
from .continuum import integrate_coefficients, simulate_price
from .errors import ConfigError, PriceModelError
from .experiments import continuum_lattice_ensemble, convergence_table, covariance_table, draw_initial_positions
from .market import MarketParams
from .supply import LinearSupplyModel, build_lattice, supply_from_json
from .tree import TreeProblem, brute_force_oracle, solve_general, solve_lq

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4

REFERENCE_PARAMS = {"T": 1.0, "eta": 1.0, "c": 1.0, "gamma": math.e**2, "kappa": 0.25, "zeta": 0.25}
REFERENCE_SUPPLY = {
    "kind": "mean_reverting",
    "target": {"fourier": {"constant": 0.0, "period": 1.0, "terms": [{"k": 1, "sin": 1.0, "cos": 0.0}]}},
    "sigma_s": 0.05,
    "speed": 1.0,
}

DEFAULTS = {
    "continuum": {
        "params": REFERENCE_PARAMS,
        "supply": REFERENCE_SUPPLY,
        "M": 11,
        "q0": 0.1,
        "mu0": 0.0,
        "steps": 1000,
        "enumerate": True,
        "n_scenarios": 100,
        "noise_kind": "gaussian",
    },
    "nplayer": {
        "params": REFERENCE_PARAMS,
        "supply": REFERENCE_SUPPLY,
        "M": 11,
        "q0": 0.1,
        "x0": {"n": 10, "mean": 0.0, "sd": 0.1},
        "method": "auto",
        "tol": 1e-8,
        "max_iters": 20000,
        "oracle": False,
    },
    "convergence": {
        "params": REFERENCE_PARAMS,
        "supply": REFERENCE_SUPPLY,
        "M": 11,
        "q0": 0.1,
        "mu0": 0.0,
        "N_list": [10, 30, 50],
        "x0_sd": 0.1,
        "steps": 1000,
        "method": "auto",
    },
    "calibrate": {"data": None, "n_harmonics": 4, "mu0": None, "gamma": None},
    "covariance": {
        "params": {"T": 1.0, "eta": 0.0, "c": 1.0, "gamma": 1.0, "kappa": 0.0, "zeta": 0.0},
        "supply": {"kind": "mean_reverting", "target": 0.0, "sigma_s": 0.05, "speed": 1.0},
        "q0": 0.0,
        "mu0": 0.0,
        "times": [0.0, 0.25, 0.5, 0.75, 1.0],
        "n_paths": 100000,
        "steps": 1000,
    },
}


# ------------------------------------------------------------------ config


def _resolve(command: str, config: dict) -> dict:
    if not isinstance(config, dict):
        raise ConfigError("config must be a JSON object")
    defaults = DEFAULTS[command]
    unknown = sorted(set(config) - set(defaults) - {"seed"})
    if unknown:
        raise ConfigError("unknown key", field=unknown[0])
    out = copy.deepcopy(defaults)
    out.update(copy.deepcopy(config))
    return out


def _int(cfg, key, minimum=None):
    value = cfg[key]
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError("expected an integer", field=key)
    if minimum is not None and value < minimum:
        raise ConfigError(f"must be at least {minimum}", field=key)
    return value


def _float(cfg, key, allow_none=False):
    value = cfg[key]
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError("expected a number", field=key)
    return float(value)


def _params(cfg) -> MarketParams:
    return MarketParams.from_dict(cfg["params"], prefix="params.")


def _supply(cfg):
    return supply_from_json(cfg["supply"], prefix="supply")


def _is_deterministic(model, T, M) -> bool:
    t = np.linspace(0.0, T, M + 1)
    lin = model.to_linear() if hasattr(model, "to_linear") else model
    if not isinstance(lin, LinearSupplyModel):
        return False
    return all(float(lin.s1(s)) == 0.0 and float(lin.s0(s)) == 0.0 for s in t)


# ----------------------------------------------------------------- outputs


class Outputs:
    """Collects tables and documents, then writes them in the chosen format."""

    def __init__(self, fmt: str):
        self.fmt = fmt
        self.tables: dict = {}
        self.documents: dict = {}
        self.raw: dict = {}

    def table(self, name, header, rows):
        self.tables[name] = (list(header), rows)

    def document(self, name, data):
        self.documents[name] = data

    def text(self, filename, content):
        self.raw[filename] = content

    def write(self, out_dir: Path) -> list[str]:
        out_dir.mkdir(parents=True, exist_ok=True)
        written = []
        for filename, content in self.raw.items():
            (out_dir / filename).write_text(content)
            written.append(filename)
        for name, (header, rows) in self.tables.items():
            if self.fmt == "csv":
                buf = io.StringIO()
                writer = csv.writer(buf, lineterminator="\n")
                writer.writerow(header)
                for row in rows:
                    writer.writerow([_fmt(v) for v in row])
                filename = f"{name}.csv"
                (out_dir / filename).write_text(buf.getvalue())
            else:
                filename = f"{name}.json"
                records = [dict(zip(header, (_jsonable(v) for v in row))) for row in rows]
                (out_dir / filename).write_text(json.dumps(records, indent=1) + "\n")
            written.append(filename)
        for name, data in self.documents.items():
            filename = f"{name}.json"
            (out_dir / filename).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
            written.append(filename)
        return sorted(written)


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def _jsonable(v):
    if isinstance(v, np.floating):
        return float(v)
    if isinstance(v, np.integer):
        return int(v)
    return v


# ---------------------------------------------------------------- commands


def cmd_continuum(cfg: dict, seed: int, out: Outputs) -> dict:
    params, supply = _params(cfg), _supply(cfg)
    M = _int(cfg, "M", 1)
    q0, mu0 = _float(cfg, "q0"), _float(cfg, "mu0")
    steps = _int(cfg, "steps", 100)
    table = integrate_coefficients(params, supply, steps)
    out.text("coefficients.csv", table.to_csv())
    if _is_deterministic(supply, params.T, M):
        scen = simulate_price(params, table, supply, mu0, q0, M, increments=np.zeros((1, M)))
        t, xbar, q, price = scen.t, scen.xbar, scen.q, scen.price
        mode = "deterministic"
    elif cfg["enumerate"]:
        lattice = build_lattice(supply, q0, M, params.T)
        scen = continuum_lattice_ensemble(params, table, supply, lattice, mu0)
        t, xbar, q, price = scen.t[:M], scen.xbar[0::2, :M], scen.q[0::2, :M], scen.price[0::2, :M]
        mode = "enumerated"
    else:
        n = _int(cfg, "n_scenarios", 1)
        scen = simulate_price(params, table, supply, mu0, q0, M, seed=seed, noise_kind=cfg["noise_kind"], n_paths=n)
        t = scen.t
        xbar, q, price = np.atleast_2d(scen.xbar), np.atleast_2d(scen.q), np.atleast_2d(scen.price)
        mode = "sampled"
    rows = [(s, t[k], xbar[s, k], q[s, k], price[s, k]) for k in range(len(t)) for s in range(price.shape[0])]
    out.table("scenarios", ["scenario", "t", "Xbar", "Q", "price"], rows)
    sd = price.std(axis=0, ddof=1) if price.shape[0] > 1 else np.zeros(len(t))
    qsd = q.std(axis=0, ddof=1) if q.shape[0] > 1 else np.zeros(len(t))
    stats = [(t[k], price[:, k].mean(), sd[k], q[:, k].mean(), qsd[k]) for k in range(len(t))]
    out.table("ensemble_stats", ["t", "price_mean", "price_sd", "Q_mean", "Q_sd"], stats)
    return {"mode": mode, "scenarios": int(price.shape[0]), "w0": float(price[0, 0])}


def _initial_positions(cfg, seed):
    spec = cfg["x0"]
    if isinstance(spec, list):
        if not spec or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in spec):
            raise ConfigError("expected a non-empty list of numbers", field="x0")
        return np.array(spec, dtype=float)
    if isinstance(spec, dict):
        unknown = sorted(set(spec) - {"n", "mean", "sd"})
        if unknown:
            raise ConfigError("unknown key", field=f"x0.{unknown[0]}")
        n = spec.get("n")
        if isinstance(n, bool) or not isinstance(n, int) or n < 1:
            raise ConfigError("expected a positive integer", field="x0.n")
        return draw_initial_positions(seed, n, float(spec.get("sd", 0.1)), float(spec.get("mean", 0.0)))
    raise ConfigError("expected a list or {n, mean, sd}", field="x0")


def cmd_nplayer(cfg: dict, seed: int, out: Outputs) -> dict:
    params, supply = _params(cfg), _supply(cfg)
    M = _int(cfg, "M", 1)
    lattice = build_lattice(supply, _float(cfg, "q0"), M, params.T)
    problem = TreeProblem(lattice, _initial_positions(cfg, seed), params)
    method = cfg["method"]
    if method not in ("auto", "kkt", "schur", "general"):
        raise ConfigError("expected auto, kkt, schur or general", field="method")
    if method == "general":
        sol = solve_general(problem, _float(cfg, "tol"), _int(cfg, "max_iters", 1))
    else:
        sol = solve_lq(problem, method=method)
    diag = sol.diagnostics()
    if cfg["oracle"]:
        ref = brute_force_oracle(problem)
        diag["oracle"] = {
            "max_velocity_diff": float(np.max(np.abs(ref.v - sol.v))),
            "max_price_diff": float(np.max(np.abs(ref.price - sol.price))),
        }
    out.document("solution", sol.to_dict())
    out.text("solution.csv", sol.to_csv())
    out.document("diagnostics", diag)
    return {"kkt_residual": sol.kkt_residual, "balance_residual": sol.balance_residual, "method": sol.method}


def cmd_convergence(cfg: dict, seed: int, out: Outputs) -> dict:
    params, supply = _params(cfg), _supply(cfg)
    N_list = cfg["N_list"]
    if not isinstance(N_list, list) or not N_list or not all(isinstance(n, int) and not isinstance(n, bool) and n >= 1 for n in N_list):
        raise ConfigError("expected a non-empty list of positive integers", field="N_list")
    rows = convergence_table(
        params,
        supply,
        _float(cfg, "q0"),
        _int(cfg, "M", 1),
        N_list,
        seed=seed,
        mu0=_float(cfg, "mu0"),
        x0_sd=_float(cfg, "x0_sd"),
        steps=_int(cfg, "steps", 100),
        method=cfg["method"],
    )
    out.table("convergence", ["N", "xbar0_gap", "mean_L2", "variables"], [r.as_tuple() for r in rows])
    return {"rows": len(rows)}


def cmd_calibrate(cfg: dict, seed: int, out: Outputs) -> dict:
    if not cfg["data"]:
        raise ConfigError("path of the market CSV is required", field="data")
    ds = MarketDataset.from_csv(Path(cfg["data"]))
    report = calibrate(ds, _int(cfg, "n_harmonics", 1), _float(cfg, "mu0", True), _float(cfg, "gamma", True))
    out.document("calibration", report.to_dict())
    return {"days": ds.n_days, "hours": ds.n_hours}


def cmd_covariance(cfg: dict, seed: int, out: Outputs) -> dict:
    params, supply = _params(cfg), _supply(cfg)
    lin = supply.to_linear()
    T = params.T
    grid = np.linspace(0.0, T, 11)
    if any(float(lin.b1(s)) != -1.0 or float(lin.s1(s)) != 0.0 for s in grid):
        raise ConfigError("the closed-form covariance needs a unit-speed mean-reverting supply", field="supply")
    sigma = float(lin.s0(0.0))
    times = cfg["times"]
    if not isinstance(times, list) or not times:
        raise ConfigError("expected a non-empty list of times", field="times")
    res = covariance_table(
        params, supply, sigma, _float(cfg, "mu0"), _float(cfg, "q0"), times,
        _int(cfg, "n_paths", 2), _int(cfg, "steps", 100), seed,
    )  # fmt: skip
    rows = list(zip(res["t"], res["closed_form"], res["monte_carlo"], res["stderr"]))
    out.table("covariance", ["t", "closed_form", "monte_carlo", "stderr"], rows)
    return {"points": len(rows)}


COMMANDS = {
    "continuum": cmd_continuum,
    "nplayer": cmd_nplayer,
    "convergence": cmd_convergence,
    "calibrate": cmd_calibrate,
    "covariance": cmd_covariance,
}


# ------------------------------------------------------------------- driver


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run(command: str, config: dict, seed: int, out_dir: Path, fmt: str = "csv", argv=None) -> dict:
    """Execute ``command`` and write outputs plus ``manifest.json``; returns the manifest."""
    if fmt not in ("csv", "json"):
        raise ConfigError("expected csv or json", field="format")
    cfg = _resolve(command, config)
    cfg.pop("seed", None)
    start = time.perf_counter()
    outputs = Outputs(fmt)
    summary = COMMANDS[command](cfg, seed, outputs)
    files = outputs.write(out_dir)
    manifest = {
        "command": command,
        "config": cfg,
        "seed": seed,
        "format": fmt,
        "outputs": {name: _sha256(out_dir / name) for name in files},
        "out_dir": str(out_dir),
        "argv": list(argv) if argv is not None else None,
        "version": __version__,
        "duration_seconds": time.perf_counter() - start,
        "summary": summary,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_jsonable) + "\n")
    return manifest


def _load_json(path: str, what: str) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise OSError(f"cannot read {what} {path}: {exc.strerror}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON ({exc.msg} at line {exc.lineno})", field=what) from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mfgprice", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("continuum", "coefficient table and continuum price scenarios"),
        ("nplayer", "N-player lattice game"),
        ("convergence", "N-player vs continuum price distance over a list of N"),
        ("calibrate", "fit supply and cost parameters to a date,hour,demand,price CSV"),
        ("covariance", "closed-form and Monte Carlo supply-price covariance"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", default=f"out/{name}", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="random seed (overrides the config)")
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        if name == "nplayer":
            p.add_argument("--oracle", action="store_true", help="cross-check against the dense oracle")
        if name == "calibrate":
            p.add_argument("data", nargs="?", help="market CSV, used when the config does not name one")
    p = sub.add_parser("rerun", help="replay a run from its manifest")
    p.add_argument("manifest")
    p.add_argument("--out", default=None, help="output directory (default: the manifest's)")
    return parser


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        if args.command == "rerun":
            m = _load_json(args.manifest, "manifest")
            for key in ("command", "config", "seed"):
                if key not in m:
                    raise ConfigError("missing key", field=f"manifest.{key}")
            if m["command"] not in COMMANDS:
                raise ConfigError(f"unknown command {m['command']!r}", field="manifest.command")
            out_dir = Path(args.out or m.get("out_dir") or ".")
            manifest = run(m["command"], m["config"], int(m["seed"]), out_dir, m.get("format", "csv"), argv)
        else:
            config = _load_json(args.config, "config") if args.config else {}
            if not isinstance(config, dict):
                raise ConfigError("config must be a JSON object")
            if args.command == "nplayer" and args.oracle and "oracle" not in config:
                config = {**config, "oracle": True}
            if args.command == "calibrate" and args.data and not config.get("data"):
                config = {**config, "data": args.data}
            seed = args.seed if args.seed is not None else config.get("seed", 0)
            if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
                raise ConfigError("expected a non-negative integer", field="seed")
            manifest = run(args.command, config, seed, Path(args.out), args.format, argv)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except PriceModelError as exc:
        print(f"solver error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    print(json.dumps({"command": manifest["command"], "out_dir": manifest["out_dir"], "summary": manifest["summary"]}, default=_jsonable))
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
