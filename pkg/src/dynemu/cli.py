"""Command-line interface: ``dynemu {design,simulate,condition,emulate,validate,bench}``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 I/O error.

Outputs are byte-stable for a given configuration and seeds: CSV files start
with a ``# {provenance}`` line, floats use the shortest round-trip repr, and
wall-clock timings go to a separate ``<output>.timings.json``.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, conditioner, pipeline
from .emulator import emulate
from .errors import ConfigError, MismatchedGrids, NonDiagonalizable, NonFinite, NotPositiveDefinite

EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 2, 3, 4


def fmt(v) -> str:
    """Shortest round-trip decimal for floats; integers verbatim."""
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_csv(path, header, rows, provenance):
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write("# " + json.dumps(provenance, sort_keys=True, separators=(",", ":")) + "\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")


def read_csv(path):
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln and not ln.startswith("#")]
    header = lines[0].split(",")
    data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]], dtype=float).reshape(-1, len(header))
    return header, data


def _timings(out, d):
    # wall-clock numbers live in their own file so that the primary outputs stay byte-stable
    write_json(str(out) + ".timings.json", {"timings": d})


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_designs(path):
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    P = np.asarray(d["params"], dtype=float)
    return P.reshape(len(d["params"]), -1)


def parse_params(arg, cfg):
    """``--params`` is a designs-format JSON file or a comma-separated vector."""
    p = Path(arg)
    if p.suffix == ".json" or p.exists():
        return read_designs(p)
    try:
        v = np.array([float(s) for s in arg.split(",")])
    except ValueError:
        raise ConfigError(f"--params must be a JSON file or comma-separated numbers, got {arg!r}") from None
    if v.size != cfg.model.param_dim:
        raise ConfigError(f"--params needs {cfg.model.param_dim} values, got {v.size}")
    return v[None, :]


def _param_names(cfg):
    if cfg.model.name == "logspm":
        from .logspm import PARAM_NAMES
        return list(PARAM_NAMES)
    return [f"p{k}" for k in range(cfg.model.param_dim)]


# --- commands --------------------------------------------------------------

def cmd_design(args, cfg):
    seed = args.seed if args.seed is not None else int(cfg.seeds.get("design", 0))
    method = args.method or cfg.design_method
    P = pipeline.sample_parameters(cfg.ranges, args.n, seed, method)
    write_json(args.out, {
        "provenance": cfg.provenance(seed=seed, command="design"),
        "method": method,
        "param_names": _param_names(cfg),
        "params": [[float(v) for v in row] for row in P],
    })


def cmd_simulate(args, cfg):
    P = read_designs(args.designs)
    y, states = pipeline.simulate(cfg, P)
    p = cfg.model.obs_dim
    header = ["time", "replica"] + [f"y{c}" for c in range(p)]
    if args.states:
        header += [f"xi{c}" for c in range(cfg.model.state_dim)]
    rows = []
    for a in range(P.shape[0]):
        for i, t in enumerate(cfg.grid.times):
            row = [float(t), a, *y[a, i]]
            if args.states:
                row += list(states[a, i])
            rows.append(row)
    write_csv(args.out, header, rows, cfg.provenance(command="simulate", designs=str(args.designs)))


def read_runs(path, n, N, p):
    header, data = read_csv(path)
    if data.shape[0] != n * (N + 1):
        raise ConfigError(f"runs file has {data.shape[0]} rows, expected n*(N+1) = {n * (N + 1)}")
    ycols = [header.index(f"y{c}") for c in range(p)]
    y = np.zeros((n, N + 1, p))
    reps = data[:, 1].astype(int)
    for a in range(n):
        block = data[reps == a][:, ycols]
        if block.shape[0] != N + 1:
            raise ConfigError(f"replica {a} has {block.shape[0]} rows in the runs file")
        y[a] = block
    return y


def cmd_condition(args, cfg):
    P = read_designs(args.designs)
    y = read_runs(args.runs, P.shape[0], cfg.grid.N, cfg.model.obs_dim)
    t = time.perf_counter()
    ce = pipeline.condition_runs(cfg, P, y)
    total = time.perf_counter() - t
    prov = cfg.provenance(command="condition", designs=str(args.designs), runs=str(args.runs))
    conditioner.save(ce, args.artifact, prov)
    report = {
        "provenance": prov,
        "jitter": ce.jitter,
        "sigma_prime_dim": ce.dim,
        "n": ce.n,
        "N": cfg.grid.N,
        "obs_dim": cfg.model.obs_dim,
        "stride": ce.config.stride,
    }
    report_path = args.report or str(args.artifact) + ".report.json"
    write_json(report_path, report)
    _timings(report_path, dict(ce.timings, total_s=total))


def cmd_emulate(args, cfg):
    ce = conditioner.load(args.artifact)
    if ce.grid.key != cfg.grid.key:
        raise MismatchedGrids("the configuration's grid differs from the artifact's grid")
    P = parse_params(args.params, cfg)
    p = cfg.model.obs_dim
    header = ["set", "time"] + [f"mean{c}" for c in range(p)]
    if args.variance:
        header += [f"var{c}" for c in range(p)]
    rows, timings = [], []
    for s, theta in enumerate(P):
        res = emulate(ce, cfg.input(theta), variance=args.variance)
        timings.append(res.timing)
        for i, t in enumerate(cfg.grid.times):
            row = [s, float(t), *res.mean[i]]
            if args.variance:
                row += list(np.diag(res.variance[i]))
            rows.append(row)
    write_csv(args.out, header, rows, cfg.provenance(command="emulate", artifact=str(args.artifact)))
    _timings(args.out, {"emulation_s": timings})


def cmd_validate(args, cfg):
    ce = conditioner.load(args.artifact)
    if ce.grid.key != cfg.grid.key:
        raise MismatchedGrids("the configuration's grid differs from the artifact's grid")
    if args.params:
        P = parse_params(args.params, cfg)
        seed = None
    else:
        seed = args.seed if args.seed is not None else int(cfg.seeds.get("heldout", 0))
        P = pipeline.sample_parameters(cfg.ranges, args.n, seed, "uniform")
    report, series = pipeline.validate(cfg, ce, P)
    emulation_s = [r.pop("emulation_s") for r in report["sets"]]
    prov = cfg.provenance(command="validate", artifact=str(args.artifact), heldout_seed=seed)
    report["provenance"] = prov
    out = Path(args.out)
    series_path = out.with_name(out.stem + "_series.csv")
    report["series_csv"] = series_path.name
    write_json(out, report)
    _timings(out, {"emulation_s": emulation_s})
    rows = []
    for s, arr in enumerate(series):
        for r in arr:
            rows.append([s, *r])
    write_csv(series_path, ["set", "time", "truth", "emulated", "prior", "rain"], rows, prov)


def parse_sweep(text):
    """``"N=200,450,900,2000;n=20,50,100,200"`` -> ({'N': [...], 'n': [...]})."""
    out = {}
    for part in filter(None, (s.strip() for s in text.split(";"))):
        key, _, vals = part.partition("=")
        if key not in ("N", "n") or not vals:
            raise ConfigError(f"bad sweep component {part!r}")
        out[key] = [int(v) for v in vals.split(",")]
    return out


DEFAULT_SWEEP = "N=200,450,900,2000;n=20,50,100,200"


def cmd_bench(args, cfg):
    sweep = parse_sweep(args.sweep or DEFAULT_SWEEP)
    N_values = sweep.get("N", [])
    n_values = sweep.get("n", [])
    seed = args.seed if args.seed is not None else 0
    rows, slopes = pipeline.bench(cfg, N_values, n_values, args.n_fixed, args.N_fixed, seed=seed)
    prov = cfg.provenance(command="bench", seed=seed, slopes=slopes)
    write_csv(args.out, ["sweep", "N", "n", "stride", "emulation_s", "conditioning_s"],
              [[r["sweep"], r["N"], r["n"], r["stride"], r["emulation_s"], r["conditioning_s"]]
               for r in rows], prov)
    print(json.dumps({"slopes": slopes}))


def build_parser():
    ap = argparse.ArgumentParser(prog="dynemu", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"dynemu {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="run configuration JSON (default: shipped logSPM configuration)")
        p.add_argument("--out", required=True)
        return p

    p = common(sub.add_parser("design", help="sample design parameter sets"))
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--method", choices=["uniform", "lhs"])
    p.set_defaults(func=cmd_design)

    p = common(sub.add_parser("simulate", help="integrate the full model for each design"))
    p.add_argument("--designs", required=True)
    p.add_argument("--states", action="store_true", help="also write the full state")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("condition", help="condition the emulator on simulated runs")
    p.add_argument("--config")
    p.add_argument("--designs", required=True)
    p.add_argument("--runs", required=True)
    p.add_argument("--artifact", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_condition)

    p = common(sub.add_parser("emulate", help="emulate the output for new parameters"))
    p.add_argument("--artifact", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--variance", action="store_true")
    p.set_defaults(func=cmd_emulate)

    p = common(sub.add_parser("validate", help="compare emulations with full-model runs"))
    p.add_argument("--artifact", required=True)
    p.add_argument("--params")
    p.add_argument("--n", type=int, default=5)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_validate)

    p = common(sub.add_parser("bench", help="time the emulation step over N and n"))
    p.add_argument("--sweep", help=f"e.g. {DEFAULT_SWEEP!r}")
    p.add_argument("--n-fixed", dest="n_fixed", type=int, default=20)
    p.add_argument("--N-fixed", dest="N_fixed", type=int, default=200)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = pipeline.load_config(args.config)
        args.func(args, cfg)
    except (ConfigError, MismatchedGrids, KeyError, ValueError, json.JSONDecodeError) as exc:
        print(f"dynemu: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NotPositiveDefinite, NonDiagonalizable, NonFinite) as exc:
        print(f"dynemu: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"dynemu: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return 0


if __name__ == "__main__":
    sys.exit(main())
