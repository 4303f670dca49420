"""Command-line entry point ``pdrice``.

Exit codes: 0 when every check passes, 1 when a check fails, 2 on a config
or runtime error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from ..crossing import detect_crossings
from ..errors import PdriceError
from ..surface import Hyperplane
from .config import list_scenarios, load_config, validate
from .runner import (
    _jsonable,
    _rice_side,
    palm_check,
    run_identity_suite,
    run_scenario,
    simulate_replications,
)


def _overrides(args):
    return {"replications": args.replications, "seed": args.seed, "horizon": args.horizon}


def _add_run_args(p):
    p.add_argument("--replications", type=int, help="override the number of replications")
    p.add_argument("--seed", type=int, help="override the master seed")
    p.add_argument("--horizon", type=float, help="override the per-replication horizon")
    p.add_argument("--out", type=Path, help="output directory")


def cmd_list(args) -> int:
    for name, desc in list_scenarios():
        print(f"{name:26s} {desc}")
    return 0


def cmd_validate(args) -> int:
    problems = validate(load_config(args.config))
    if not problems:
        print("ok")
        return 0
    for p in problems:
        print(p)
    return 2


def cmd_simulate(args) -> int:
    cfg = load_config(args.config).with_overrides(**_overrides(args))
    problems = validate(cfg)
    if problems:
        raise PdriceError("; ".join(problems))
    trajs = simulate_replications(cfg, workers=args.workers)
    out = args.out or Path(cfg.outputs.get("directory") or f"out/{cfg.name}")
    out.mkdir(parents=True, exist_ok=True)
    summary = []
    for r, tr in enumerate(trajs):
        tr.to_csv(out / f"trajectory_rep{r}.csv")
        summary.append({"replication": r, "jumps": tr.n_jumps, "jump_rate": tr.jump_rate, "horizon": tr.horizon})
    (out / "simulation.json").write_text(json.dumps({"scenario": cfg.name, "replications": summary}, indent=2) + "\n")
    print(f"{len(trajs)} replications written to {out}")
    return 0


def _print_report(data):
    print(f"scenario {data['scenario']}  (config {data['provenance']['config_hash']})")
    for c in data.get("comparisons", []):
        if c.get("rice") is None:
            print(f"  {c['name']}: no Rice value")
            continue
        nu, rice = c["nu_hat"], c["rice"]
        print(f"  {c['name']}: nu_hat = {nu['value']:.6g} +- {nu['std_error']:.3g}  "
              f"rice = {rice['value']:.6g}  z = {c['z']:+.3f}  {'PASS' if c['passed'] else 'FAIL'}")
    if "palm" in data:
        print(f"  palm: chi2 = {data['palm']['chi2']:.3f} (df {data['palm']['df']}), p = {data['palm']['p_value']:.3g}")
    if "triggering" in data:
        print(f"  triggering probabilities {data['triggering']['probabilities']} "
              f"(sum exactly one: {data['triggering']['sum_is_one']})")
    for k, v in data.get("identities", {}).items():
        print(f"  identity {k}: {'PASS' if v.get('passed') else 'FAIL'}")
    for f in data.get("flags", []):
        print(f"  flag: {f}")
    print("PASS" if data.get("passed") else "FAIL")


def cmd_verify(args) -> int:
    rep = run_scenario(args.config, out_dir=args.out, plots=args.plots, identities=args.identities, **_overrides(args))
    _print_report(rep.data)
    return 0 if rep.passed else 1


def cmd_identities(args) -> int:
    cfg = load_config(args.config).with_overrides(**_overrides(args))
    problems = validate(cfg)
    if problems:
        raise PdriceError("; ".join(problems))
    res = run_identity_suite(cfg)
    ok = all(v.get("passed", False) for v in res.values())
    for k, v in res.items():
        print(f"{k}: {'PASS' if v.get('passed') else 'FAIL'}")
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "identities.json").write_text(json.dumps(_jsonable(res), indent=2) + "\n")
    return 0 if ok else 1


def cmd_palm(args) -> int:
    cfg = load_config(args.config).with_overrides(**_overrides(args))
    trajs = simulate_replications(cfg)
    d = trajs[0].dim
    if d < 2:
        raise PdriceError("the crossing-location distribution needs d >= 2")
    lo, hi = args.window
    surf = Hyperplane(d, args.axis, args.level, window=([lo] * (d - 1), [hi] * (d - 1)))
    sets = [detect_crossings(tr, surf, step=float(cfg.run["step"])) for tr in trajs]
    from ..pdmp import model_from_dict

    _, _, density = _rice_side(surf, model_from_dict(cfg.model), trajs, cfg, None)
    edges = [np.linspace(lo, hi, args.bins + 1)] if d == 2 else None
    if edges is None:
        raise PdriceError("palm binning is implemented for d = 2")
    entry, _, _ = palm_check(sets, surf, trajs[0].field, density, edges)
    print(f"{'bin':>18s} {'empirical':>10s} {'se':>8s} {'Q_u':>10s}")
    e = edges[0]
    for i, (p, s, q) in enumerate(zip(entry["histogram"]["probs"], entry["histogram"]["std_errors"], entry["q_u"])):
        print(f"[{e[i]:7.3f},{e[i + 1]:7.3f}) {p:10.5f} {s:8.5f} {q:10.5f}")
    print(f"chi2 = {entry['chi2']:.3f} on {entry['df']} df, p = {entry['p_value']:.4g}")
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "palm.json").write_text(json.dumps(_jsonable(entry), indent=2) + "\n")
    return 0 if entry["passed"] else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pdrice", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate replications and write trajectories")
    p.add_argument("config")
    p.add_argument("--workers", type=int, default=1)
    _add_run_args(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify", help="compare crossing intensities with Rice values")
    p.add_argument("config", help="config file or bundled scenario name")
    p.add_argument("--plots", action="store_true", default=None, help="write SVG figures")
    p.add_argument("--identities", action="store_true", default=None, help="also run the identity checks")
    _add_run_args(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("identities", help="run the identity checks")
    p.add_argument("config")
    _add_run_args(p)
    p.set_defaults(func=cmd_identities)

    p = sub.add_parser("palm", help="crossing-location histogram against the Palm slice")
    p.add_argument("config")
    p.add_argument("--axis", type=int, required=True)
    p.add_argument("--level", type=float, required=True)
    p.add_argument("--bins", type=int, default=12)
    p.add_argument("--window", type=float, nargs=2, default=(0.0, 4.0), metavar=("LO", "HI"))
    _add_run_args(p)
    p.set_defaults(func=cmd_palm)

    p = sub.add_parser("list", help="list bundled scenarios")
    p.set_defaults(func=cmd_list)

    p = sub.add_parser("validate", help="check a config and report violated preconditions")
    p.add_argument("config")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except PdriceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
