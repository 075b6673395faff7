"""Command line entry point: ``formjoin validate | run | join-demo``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import scenario
from .constraints import Triplet, constraint_weights, rotated_offset
from .errors import ConfigError, FormationError, NumericalInstability
from .laplacian import DesignWeight, join_update, triplet_stamp, validate_spectral

EXIT_OK, EXIT_CONFIG, EXIT_VIOLATION, EXIT_UNSTABLE = 0, 2, 3, 4


def _parse_random(tokens: list[str]) -> dict:
    opts = {}
    for tok in tokens:
        key, sep, val = tok.partition("=")
        if not sep or key not in ("d", "n", "seed"):
            raise ConfigError(f"--random expects d=<int> n=<int> [seed=<int>], got {tok!r}")
        try:
            opts[key] = int(val)
        except ValueError:
            raise ConfigError(f"--random: {key} must be an integer") from None
    if "d" not in opts or "n" not in opts:
        raise ConfigError("--random requires both d= and n=")
    return opts


def cmd_validate(args) -> int:
    if args.random is not None:
        opts = _parse_random(args.random)
        doc = scenario.random_scenario(opts["d"], opts["n"], opts.get("seed", args.seed or 0))
        cfg = scenario.scenario_from_dict(doc, "random")
    elif args.config:
        cfg = scenario.load_scenario(args.config)
    else:
        raise ConfigError("validate needs a scenario path/name or --random d=.. n=..")
    report = scenario.validate(cfg)
    print(json.dumps(report, indent=2))
    return EXIT_OK if report["passed"] else EXIT_VIOLATION


def cmd_run(args) -> int:
    cfg = scenario.load_scenario(args.config)
    out = args.out or cfg.output
    if not out:
        raise ConfigError("run needs --out or an 'output' entry in the scenario")
    art = scenario.run(cfg, dt=args.dt, seed=args.seed, sample_every=args.sample_every)
    path = art.write(out)
    summary = {
        "output": str(path),
        "epochs": len(art.snapshots),
        "final_max_error": art.metrics["final_max_error"],
        "trajectory_rows": len(art.trajectory),
    }
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def _fmt(m) -> str:
    return np.array2string(np.asarray(m), precision=4, suppress_small=True)


def cmd_join_demo(args) -> int:
    L, F = scenario.six_agent_fixture()
    i, j, v = 5, 6, 7
    p_v = np.array([-1.0, -2.1])
    R = F.rotation
    F7 = F.with_agent(v, p_v)
    print("Nominal positions:")
    for a in F7.agent_ids:
        print(f"  p~{a} = {F7.position(a).tolist()}")
    print(f"\nTriplet ({i},{j},{v}), R = I, D = I")
    print(f"  p~_{j}{v},R = {rotated_offset(F7.position(j), p_v, R).tolist()}")
    print(f"  p~_{v}{i},R = {rotated_offset(p_v, F7.position(i), R).tolist()}")
    w = constraint_weights(Triplet(i, j, v), F7)
    print(f"  W_{j}{v} =\n{_fmt(w.w_jk)}\n  W_{v}{i} =\n{_fmt(w.w_ki)}\n  W_{v}{v} =\n{_fmt(w.w_kk)}")
    st = triplet_stamp(Triplet(i, j, v), F7, DesignWeight.identity(2))
    print("\nStamp edge blocks:")
    for a, b, blk in st.edge_deltas():
        print(f"  L_{a}{b} =\n{_fmt(blk)}")
    L7, F7, _ = join_update(L, F, v, p_v, i, j)
    print(f"\nMerged block L_{i}{j} =\n{_fmt(L7.block(i, j))}")
    before, after = validate_spectral(L, F), validate_spectral(L7, F7)
    print("\nSpectral check before join:", json.dumps(before.to_dict()))
    print("Spectral check after join: ", json.dumps(after.to_dict()))
    return EXIT_OK if after.passed else EXIT_VIOLATION


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="formjoin", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="spectral and genericity checks without simulation")
    p.add_argument("config", nargs="?", help="scenario file or bundled name (paper_4_1, paper_4_2)")
    p.add_argument("--random", nargs="+", metavar="KEY=VAL", help="generate a random scenario, e.g. d=3 n=10")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", help="integrate a scenario and write artifacts")
    p.add_argument("config")
    p.add_argument("--out")
    p.add_argument("--dt", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--sample-every", type=int, dest="sample_every")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("join-demo", help="print the six-to-seven agent join step by step")
    p.set_defaults(func=cmd_join_demo)
    return parser


def main(argv=None) -> int:
    level = getattr(logging, os.environ.get("FF_LOG", "WARNING").upper(), logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalInstability as exc:
        print(f"numerical instability: {exc}", file=sys.stderr)
        return EXIT_UNSTABLE
    except FormationError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_VIOLATION


if __name__ == "__main__":
    sys.exit(main())
