"""Command line: ``nodalflow {validate,solve,flow,verify} CONFIG``.

Exit codes: 0 ok, 1 hypothesis or property failure, 2 input error, 3 search
shortfall (fewer distinct solutions than ``search.count_target``).
"""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import os
import platform
import sys
from importlib import metadata

import numpy as np
import scipy

from . import fields
from .config import ConfigError, RunConfig, load
from .flow import StiffnessError, integrate
from .search import (SearchOutcome, SolutionRecord, find_multiple, verify_record,
                     write_degenerate, write_solutions)
from .seeds import build_basis
from .system import validate
from .verify import run_suite

EXIT_OK, EXIT_HYPOTHESIS, EXIT_INPUT, EXIT_SHORTFALL = 0, 1, 2, 3


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def cmd_validate(cfg: RunConfig, out=None) -> int:
    out = out or sys.stdout
    rep = validate(cfg.params, cfg.blocks)
    print(rep.table(), file=out)
    verdict = "hypotheses hold" if rep.passes() else "hypotheses FAIL"
    print(f"\n{verdict} (uniform system: {rep.uniform})", file=out)
    return EXIT_OK if rep.passes() else EXIT_HYPOTHESIS


def summary_table(records) -> str:
    rows = [f"{'id':<18}{'J':>20}  {'signature':<14}{'residual_l2':>12}"]
    for r in records:
        rows.append(f"{r.id:<18}{r.energy:>20.12g}  {str(list(r.signature)):<14}"
                    f"{r.residual_l2:>12.3e}")
    return "\n".join(rows)


def cmd_solve(cfg: RunConfig, force: bool = False, workers: int | None = None,
              out_dir: str | None = None, out=None) -> int:
    out = out or sys.stdout
    params, blocks = cfg.params, cfg.blocks
    rep = validate(params, blocks)
    if not rep.passes() and not force:
        print(rep.table(), file=out)
        print("hypotheses fail; rerun with --force to search anyway", file=out)
        return EXIT_HYPOTHESIS
    grid = cfg.grid()
    policy = cfg.policy(grid)
    settings = cfg.settings()
    basis = build_basis(grid, blocks, cfg.get("search.K"))
    out_dir = out_dir or cfg.get("output.dir")
    os.makedirs(out_dir, exist_ok=True)
    started = _now()
    result: SearchOutcome = find_multiple(
        grid, params, blocks, basis, cfg.get("search.count_target"), cfg.get("search.budget"),
        policy, cfg.get("search.rng_seed"), settings,
        workers=workers if workers is not None else cfg.get("search.workers"), force=True)
    write_solutions(out_dir, grid, result.records)
    write_degenerate(out_dir, result.degenerate)
    manifest = {"config": cfg.to_dict(), "rng_seed": cfg.get("search.rng_seed"),
                "forced": bool(force and not rep.passes()), "summary": result.summary(),
                "errors": [{"seed_index": i, "error": e} for i, e in result.errors],
                "duplicates": result.duplicates,
                "started": started, "finished": _now(),
                "versions": {"package": _version(), "python": platform.python_version(),
                             "numpy": np.__version__, "scipy": scipy.__version__}}
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    print(summary_table(result.records), file=out)
    s = result.summary()
    print(f"\n{s['records']} distinct of {s['count_target']} wanted, "
          f"{s['seeds_used']} seeds used, degenerate runs {s['degenerate']}, "
          f"errors {s['errors']}", file=out)
    if result.shortfall:
        print("shortfall: fewer distinct solutions than search.count_target", file=out)
        return EXIT_SHORTFALL
    return EXIT_OK


def cmd_flow(cfg: RunConfig, initial: str, out_path: str | None = None, out=None) -> int:
    out = out or sys.stdout
    grid = cfg.grid()
    U0 = fields.read_profile(initial, grid)
    if U0.shape[0] != cfg.params.n_comp:
        raise ConfigError(f"profile has {U0.shape[0]} components, config has N={cfg.params.n_comp}")
    if out_path is None:
        os.makedirs(cfg.get("output.dir"), exist_ok=True)
        out_path = os.path.join(cfg.get("output.dir"), "trajectory.jsonl")
    with open(out_path, "w", encoding="utf-8") as fh:
        try:
            tr = integrate(grid, cfg.params, U0, cfg.policy(grid), cfg.blocks, monitor=fh)
            fate, reason = tr.fate.value, tr.fate_reason
        except StiffnessError as exc:
            fate, reason = "StiffnessFailure", str(exc)
        fh.write(json.dumps({"fate": fate, "reason": reason}) + "\n")
    print(f"fate: {fate} ({reason}); trajectory in {out_path}", file=out)
    return EXIT_OK


def _load_records(directory, grid):
    path = os.path.join(directory, "solutions.jsonl")
    recs = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            meta = json.loads(line)
            U = fields.read_profile(os.path.join(directory, "profiles", f"{meta['id']}.csv"), grid)
            recs.append(SolutionRecord(U, meta["J"], meta["residual_l2"], tuple(meta["signature"]),
                                       meta["bump_l4"], meta["provenance"], meta["id"]))
    return recs


def cmd_verify(cfg: RunConfig, records_dir: str | None = None, scale: float = 1.0,
               out=None) -> int:
    out = out or sys.stdout
    grid = cfg.grid()
    policy = cfg.policy(grid)
    results = run_suite(grid, cfg.params, cfg.blocks, policy,
                        rng_seed=cfg.get("search.rng_seed"), scale=scale)
    ok = True
    for r in results:
        print(r.line(), file=out)
        if r.name == "energy_monotone":
            print(f"     step retries (energy guard): {r.detail['rejected_steps']}", file=out)
        for msg in r.detail.get("stiffness_failures", []):
            print(f"     stiffness: {msg}", file=out)
        ok &= r.ok is not False
    if records_dir:
        for rec in _load_records(records_dir, grid):
            rep = verify_record(grid, cfg.params, cfg.blocks, rec, policy, cfg.settings())
            status = "PASS" if rep.ok else "FAIL"
            print(f"{status} record {rec.id} failures={rep.failures}", file=out)
            drift = rep.checks["flow_drift"]
            if not drift["applicable"]:
                print(f"     flow drift checked on t<={drift['window']:.3g} only "
                      f"(growth rate {drift['top_growth_rate']:.3g})", file=out)
            ok &= rep.ok
    return EXIT_OK if ok else EXIT_HYPOTHESIS


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nodalflow", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    v = sub.add_parser("validate", help="check the block hypotheses")
    v.add_argument("config")
    s = sub.add_parser("solve", help="search for distinct solutions")
    s.add_argument("config")
    s.add_argument("--force", action="store_true", help="search even if hypotheses fail")
    s.add_argument("--workers", type=int, default=None)
    s.add_argument("--out", default=None, help="output directory (overrides output.dir)")
    f = sub.add_parser("flow", help="integrate the flow from a profile CSV")
    f.add_argument("config")
    f.add_argument("initial")
    f.add_argument("--out", default=None, help="trajectory JSONL path")
    w = sub.add_parser("verify", help="run the property suite")
    w.add_argument("config")
    w.add_argument("--records", default=None, help="directory with solutions.jsonl to re-check")
    w.add_argument("--scale", type=float, default=1.0, help="shrink sample counts")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        cfg = load(args.config)
        if args.command == "validate":
            return cmd_validate(cfg)
        if args.command == "solve":
            return cmd_solve(cfg, args.force, args.workers, args.out)
        if args.command == "flow":
            return cmd_flow(cfg, args.initial, args.out)
        return cmd_verify(cfg, args.records, args.scale)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
