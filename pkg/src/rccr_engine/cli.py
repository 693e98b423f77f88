"""Batch command-line client for the pricing service.

Commands run against an in-process service instance by default, or against a
remote server via ``--server``.  Every command writes CSV data files plus a
``manifest.json`` recording the fully resolved request, the seed, the package
version and the runtime; CSV files name the preset and seed in their header
comment so outputs are self-describing.

Configuration precedence: built-in defaults < ``--config`` JSON file <
explicit command-line flags.
"""

from __future__ import annotations

import argparse
import datetime as dt
import json
import sys
import time
from pathlib import Path

from . import __version__
from .hedging import DEFAULT_PERTURBATIONS


class CommandError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code
        self.message = message


def _client(server: str | None):
    if server:
        import httpx

        return httpx.Client(base_url=server, timeout=None)
    import warnings

    with warnings.catch_warnings():
        # starlette's test client warns about the bundled httpx major version
        warnings.simplefilter("ignore")
        from fastapi.testclient import TestClient

    from .service import app

    return TestClient(app)


def _post(client, path: str, payload: dict) -> dict:
    resp = client.post(path, json=payload)
    if resp.status_code != 200:
        try:
            detail = resp.json().get("detail", {})
        except Exception:
            detail = {}
        if isinstance(detail, dict) and "code" in detail:
            raise CommandError(detail["code"], detail.get("message", ""))
        raise CommandError("http_error", f"{path} returned {resp.status_code}: {resp.text}")
    return resp.json()


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.12g}"
    return str(x)


class OutputWriter:
    def __init__(self, out_dir: Path, preset: str, seed: int):
        self.out_dir = out_dir
        self.preset = preset
        self.seed = seed
        self.files: list[str] = []
        out_dir.mkdir(parents=True, exist_ok=True)

    def csv(self, name: str, header: list[str], rows) -> Path:
        path = self.out_dir / name
        with open(path, "w") as fh:
            fh.write(f"# preset={self.preset} seed={self.seed}\n")
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(_fmt(v) for v in row) + "\n")
        self.files.append(name)
        return path

    def json(self, name: str, payload: dict) -> Path:
        path = self.out_dir / name
        payload = {"preset": self.preset, "seed": self.seed, **payload}
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        self.files.append(name)
        return path

    def manifest(self, command: str, request: dict, runtime: float) -> Path:
        path = self.out_dir / "manifest.json"
        payload = {
            "command": command,
            "request": request,
            "preset": self.preset,
            "seed": self.seed,
            "version": __version__,
            "runtime_seconds": round(runtime, 3),
            "created_utc": dt.datetime.now(dt.timezone.utc).isoformat(),
            "outputs": sorted(self.files),
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path


# ---------------------------------------------------------------------------
# Request assembly
# ---------------------------------------------------------------------------


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    with open(path) as fh:
        return json.load(fh)


def _base_payload(args, cfg: dict) -> dict:
    payload: dict = {}
    preset = args.preset or cfg.get("preset")
    params = cfg.get("params")
    if params is not None:
        payload["params"] = params
    if preset is not None and params is None:
        payload["preset"] = preset
    elif preset is not None and params is not None:
        # flags win: an explicit preset overrides file params
        if args.preset:
            payload.pop("params", None)
            payload["preset"] = preset
        else:
            payload["preset"] = None
    if "grid" in cfg:
        payload["grid"] = dict(cfg["grid"])
    if args.steps or args.rebalance:
        grid = dict(payload.get("grid", {}))
        if args.steps:
            grid["n_steps"] = args.steps
        if args.rebalance:
            grid["n_rebalance"] = args.rebalance
        payload["grid"] = grid
    if payload.get("params") is None and payload.get("preset") is None:
        raise CommandError("bad_request", "provide --preset or a config file with params")
    return payload


def _seed(args, cfg: dict, default: int = 0) -> int:
    if args.seed is not None:
        return args.seed
    return int(cfg.get("seed", default))


def _paths_count(args, cfg: dict, default: int) -> int:
    if args.paths is not None:
        return args.paths
    return int(cfg.get("paths", default))


def _preset_label(payload: dict) -> str:
    return payload.get("preset") or "custom"


# ---------------------------------------------------------------------------
# Command implementations
# ---------------------------------------------------------------------------


def cmd_validate(args, client) -> int:
    cfg = _load_config(args.config)
    payload = _base_payload(args, cfg)
    t0 = time.time()
    data = _post(client, "/validate", payload)
    writer = OutputWriter(Path(args.out), _preset_label(payload), _seed(args, cfg))
    writer.csv(
        "validate_report.csv",
        ["name", "status", "detail"],
        [(c["name"], c["status"], c["detail"].replace(",", ";")) for c in data["checks"]],
    )
    writer.json("validate_summary.json", {"ok": data["ok"]})
    writer.manifest("validate", payload, time.time() - t0)
    if not data["ok"]:
        fails = [c["name"] for c in data["checks"] if c["status"] == "fail"]
        print(json.dumps({"error": {"code": "validation_failed", "message": str(fails)}}),
              file=sys.stderr)
        return 2
    print(f"validation ok ({len(data['checks'])} checks)")
    return 0


def cmd_price(args, client) -> int:
    cfg = _load_config(args.config)
    payload = _base_payload(args, cfg)
    payload["regime"] = args.regime
    payload["seed"] = _seed(args, cfg)
    t0 = time.time()
    data = _post(client, "/price", payload)
    writer = OutputWriter(Path(args.out), _preset_label(payload), payload["seed"])
    writer.csv("price_table.csv", ["t", "l", "value"], data["rows"])
    writer.json("price_summary.json", {
        "mode": data["mode"], "regime_intensity": data["regime_intensity"], "v0": data["v0"],
    })
    writer.manifest("price", payload, time.time() - t0)
    print(f"v(0,0) = {data['v0']:.6f} [{data['mode']}]")
    return 0


def cmd_cds(args, client) -> int:
    cfg = _load_config(args.config)
    payload = _base_payload(args, cfg)
    t0 = time.time()
    data = _post(client, "/cds", payload)
    writer = OutputWriter(Path(args.out), _preset_label(payload), _seed(args, cfg))
    writer.csv("cds_curve.csv", ["t", "y", "value"], data["rows"])
    writer.json("cds_summary.json", {
        "fair_spread": data["fair_spread"], "zeta": data["zeta"], "g0": data["g0"],
    })
    writer.manifest("cds", payload, time.time() - t0)
    print(f"fair spread = {data['fair_spread']:.8f}, g(0, y0) = {data['g0']:.3e}")
    return 0


def cmd_cva(args, client) -> int:
    cfg = _load_config(args.config)
    payload = _base_payload(args, cfg)
    payload.update({
        "t": args.t, "l": args.l,
        "n_paths": _paths_count(args, cfg, 50_000),
        "seed": _seed(args, cfg),
        "with_sensitivities": args.sensitivities,
    })
    if args.x is not None:
        payload["x"] = args.x
    if args.y is not None:
        payload["y"] = args.y
    t0 = time.time()
    data = _post(client, "/cva", payload)
    writer = OutputWriter(Path(args.out), _preset_label(payload), payload["seed"])
    writer.json("cva_summary.json", data)
    writer.manifest("cva", payload, time.time() - t0)
    mc = data["mc"]
    print(f"CVA({args.t}) = {data['surface_value']:.6f} (surface), "
          f"{mc['value']:.6f} +- {mc['stderr']:.6f} (MC)")
    return 0


def cmd_sweep(args, client) -> int:
    cfg = _load_config(args.config)
    payload = _base_payload(args, cfg)
    payload.update({
        "parameter": args.param,
        "lo": args.lo, "hi": args.hi, "n_points": args.points,
        "n_paths": _paths_count(args, cfg, 20_000),
        "seed": _seed(args, cfg),
    })
    t0 = time.time()
    data = _post(client, "/sweep", payload)
    writer = OutputWriter(Path(args.out), _preset_label(payload), payload["seed"])
    writer.csv(f"sweep_{args.param}.csv", [args.param, "cva0", "stderr"], data["rows"])
    writer.json("sweep_summary.json", {
        "parameter": data["parameter"],
        "total_increase": data["total_increase"],
        "monotone_within_3se": data["monotone_within_3se"],
    })
    writer.manifest("sweep", payload, time.time() - t0)
    print(f"{args.param}-sweep: total increase {data['total_increase']:.4f}, "
          f"monotone(3se)={data['monotone_within_3se']}")
    return 0


def _backtest_payload(args, cfg: dict) -> dict:
    payload = _base_payload(args, cfg)
    payload.update({
        "n_paths": _paths_count(args, cfg, 2000),
        "seed": _seed(args, cfg, 7),
    })
    strategies = getattr(args, "strategy", None)
    if strategies:
        payload["strategies"] = strategies
    return payload


def cmd_backtest(args, client) -> int:
    cfg = _load_config(args.config)
    payload = _backtest_payload(args, cfg)
    payload["perturbations"] = list(DEFAULT_PERTURBATIONS)
    t0 = time.time()
    data = _post(client, "/backtest", payload)
    writer = OutputWriter(Path(args.out), _preset_label(payload), payload["seed"])
    writer.csv(
        "backtest_summary.csv",
        ["strategy", "mean_sq", "mean_sq_stderr", "mean", "mean_stderr"],
        [(s["name"], s["mean_sq"], s["mean_sq_stderr"], s["mean"], s["mean_stderr"])
         for s in data["stats"]],
    )
    names = list(data["e_terminal"].keys())
    n = len(data["tau"])
    rows = []
    for i in range(n):
        tau = data["tau"][i]
        rows.append([i, tau, int(tau >= 0)] + [data["e_terminal"][k][i] for k in names])
    writer.csv("backtest_errors.csv", ["path", "tau", "defaulted"] + [f"e_{k}" for k in names], rows)
    traj_rows = []
    for name in names:
        for row_idx, pid in enumerate(data["trajectory_ids"]):
            for t_val, e_val in zip(data["dates"], data["trajectories"][name][row_idx]):
                traj_rows.append((name, pid, t_val, e_val))
    writer.csv("backtest_trajectories.csv", ["strategy", "path", "t", "error"], traj_rows)
    writer.json("backtest_summary.json", {
        "cva0": data["cva0"], "zeta": data["zeta"],
        "n_paths": data["n_paths"], "n_defaults": data["n_defaults"],
        "stats": data["stats"], "perturbations": data["perturbations"],
    })
    writer.manifest("backtest", payload, time.time() - t0)
    for s in data["stats"]:
        print(f"{s['name']:9s} E[e_T^2] = {s['mean_sq']:.4f} +- {s['mean_sq_stderr']:.4f}")
    return 0


def cmd_density(args, client) -> int:
    cfg = _load_config(args.config)
    payload = _backtest_payload(args, cfg)
    payload.update({"strategy": args.strategy_name, "bins": args.bins})
    t0 = time.time()
    data = _post(client, "/density", payload)
    writer = OutputWriter(Path(args.out), _preset_label(payload), payload["seed"])
    edges = data["bin_edges"]
    writer.csv(
        f"density_{args.strategy_name}_hist.csv",
        ["bin_left", "bin_right", "mass"],
        [(edges[i], edges[i + 1], m) for i, m in enumerate(data["masses"])],
    )
    writer.csv(
        f"density_{args.strategy_name}_kde.csv",
        ["x", "density"],
        list(zip(data["kde_x"], data["kde_y"])),
    )
    writer.json("density_summary.json", {
        "strategy": data["strategy"], "n_defaults": data["n_defaults"],
    })
    writer.manifest("density", payload, time.time() - t0)
    print(f"conditional density over {data['n_defaults']} defaulted paths")
    return 0


def cmd_trajectory(args, client) -> int:
    cfg = _load_config(args.config)
    payload = _base_payload(args, cfg)
    payload.update({
        "path_index": args.path_index,
        "n_paths": _paths_count(args, cfg, 64),
        "seed": _seed(args, cfg, 7),
    })
    t0 = time.time()
    data = _post(client, "/trajectory", payload)
    writer = OutputWriter(Path(args.out), _preset_label(payload), payload["seed"])
    writer.csv(
        "trajectory.csv",
        ["t", "dynamic", "static", "loss", "x", "y"],
        list(zip(data["dates"], data["dynamic"], data["static"],
                 data["loss"], data["x"], data["y"])),
    )
    writer.json("trajectory_summary.json", {"tau": data["tau"]})
    writer.manifest("trajectory", payload, time.time() - t0)
    print(f"trajectory written ({len(data['dates'])} dates, tau={data['tau']})")
    return 0


def cmd_serve(args, _client) -> int:
    import uvicorn

    from .service import app

    uvicorn.run(app, host=args.host, port=args.port)
    return 0


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rccr",
        description="Counterparty-risk pricing, CVA and CDS hedge backtesting",
    )
    parser.add_argument("--server", default=None,
                        help="base URL of a running service (default: in-process)")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--preset", default=None, help="case1 | case2 | case3")
        p.add_argument("--config", default=None, help="JSON experiment config file")
        p.add_argument("--out", default="rccr_out", help="output directory")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--paths", type=int, default=None)
        p.add_argument("--steps", type=int, default=None)
        p.add_argument("--rebalance", type=int, default=None)

    p = sub.add_parser("validate", help="run the model assumption checks")
    common(p)
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("price", help="counterparty-risk-free contract value table")
    common(p)
    p.add_argument("--regime", choices=["pre", "post"], default="pre")
    p.set_defaults(fn=cmd_price)

    p = sub.add_parser("cds", help="CDS book value curve and fair spread")
    common(p)
    p.set_defaults(fn=cmd_cds)

    p = sub.add_parser("cva", help="credit value adjustment at a state")
    common(p)
    p.add_argument("--t", type=float, default=0.0)
    p.add_argument("--l", type=float, default=0.0)
    p.add_argument("--x", type=float, default=None)
    p.add_argument("--y", type=float, default=None)
    p.add_argument("--sensitivities", action="store_true")
    p.set_defaults(fn=cmd_cva)

    p = sub.add_parser("sweep", help="CVA sweep over contagion or correlation")
    common(p)
    p.add_argument("--param", choices=["gamma", "rho"], required=True)
    p.add_argument("--from", dest="lo", type=float, default=0.0)
    p.add_argument("--to", dest="hi", type=float, default=1.0)
    p.add_argument("--points", type=int, default=11)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("backtest", help="hedging strategy backtest")
    common(p)
    p.add_argument("--strategy", action="append", default=None,
                   help="repeatable; default: unhedged static dynamic")
    p.set_defaults(fn=cmd_backtest)

    p = sub.add_parser("density", help="tracking-error density given default")
    common(p)
    p.add_argument("--strategy", dest="strategy_name", default="dynamic")
    p.add_argument("--bins", type=int, default=40)
    p.set_defaults(fn=cmd_density)

    p = sub.add_parser("trajectory", help="hedge notional along one scenario")
    common(p)
    p.add_argument("--path-index", type=int, default=0)
    p.set_defaults(fn=cmd_trajectory)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(fn=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    client = None if args.command == "serve" else _client(args.server)
    try:
        return args.fn(args, client)
    except CommandError as exc:
        print(json.dumps({"error": {"code": exc.code, "message": exc.message}}),
              file=sys.stderr)
        return 1
    finally:
        if client is not None:
            client.close()


if __name__ == "__main__":
    sys.exit(main())
