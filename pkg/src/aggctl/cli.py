"""Command line interface.

    aggctl validate --config cfg.json          design report per population size
    aggctl run --scenario pev --size 100       one experiment, traces and profile
    aggctl batch --config cfg.json             full sweep with summary tables
    aggctl certify --profile out/profile.json  check a saved strategy profile

Exit status is 0 when every run converged and every certificate passed, 1
otherwise, and 2 for invalid input.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from . import coordinator as co
from . import harness as hs
from . import verify as vf
from .errors import DesignViolation, InfeasibleSetError, InvalidInputError

log = logging.getLogger("aggctl")

SCENARIOS = ("congestion", "pev", "symmetric", "random", "two_agent")

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_INPUT = 2


def _common(p):
    p.add_argument("--config", type=Path, help="JSON experiment config (or a manifest)")
    p.add_argument("--scenario", choices=sorted(SCENARIOS))
    p.add_argument("--params", type=str, help="scenario parameters as a JSON object")
    p.add_argument("--seed", type=int, help="base seed (unsigned 64-bit)")
    p.add_argument("--tol", type=float, help="stopping tolerance on ||Theta||")
    p.add_argument("--max-iter", type=int, dest="max_iter")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--format", choices=hs.FORMATS)
    p.add_argument("--workers", type=int)
    p.add_argument("--cert-tol", type=float, dest="cert_tol")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="aggctl", description="Forward-backward coordination of aggregative games."
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    verbosity = argparse.ArgumentParser(add_help=False)
    verbosity.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser(
        "validate", parents=[verbosity], help="print the design report for a configuration"
    )
    _common(p)
    p.add_argument("--size", type=int, action="append", help="population size (repeatable)")

    p = sub.add_parser("run", parents=[verbosity], help="run a single experiment")
    _common(p)
    p.add_argument("--size", type=int, help="population size")
    p.add_argument("--replicate", type=int, default=0)

    p = sub.add_parser("batch", parents=[verbosity], help="run the full size/replicate sweep")
    _common(p)
    p.add_argument("--size", type=int, action="append", help="population size (repeatable)")
    p.add_argument("--replicates", type=int)

    p = sub.add_parser("certify", parents=[verbosity], help="certify a saved strategy profile")
    p.add_argument("--profile", type=Path, required=True, help="profile JSON written by `run`")
    p.add_argument("--tol", type=float, default=vf.DEFAULT_CERT_TOL)
    return parser


def _config(args, sizes=None):
    cfg = hs.load_config(args.config) if args.config else hs.ExperimentConfig()
    params = None
    if args.params:
        try:
            params = json.loads(args.params)
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"--params is not valid JSON: {exc}") from exc
    changes = dict(
        scenario=args.scenario,
        params=params,
        base_seed=args.seed,
        tol=args.tol,
        max_iter=args.max_iter,
        out=str(args.out) if args.out else None,
        format=args.format,
        workers=args.workers,
        cert_tol=args.cert_tol,
        sizes=sizes,
        replicates=getattr(args, "replicates", None),
    )
    if args.scenario and args.scenario != cfg.scenario and params is None:
        changes["params"] = {}
    if sizes is None and (args.scenario or cfg.scenario) == "two_agent":
        changes["sizes"] = [2]
    return cfg.replace(**changes)


def cmd_validate(args):
    cfg = _config(args, args.size)
    ok = True
    reports = []
    for size in cfg.sizes:
        pop, _, _, seed = hs.build_replicate(cfg, size, 0)
        report, eps, _ = co.design_for(pop, cfg.run_config())
        d = report.as_dict()
        d.update({"N": size, "seed": seed, "coupling_within_hull": pop.coupling_within_hull()})
        reports.append(d)
        ok &= report.passed
    print(json.dumps(reports, indent=1))
    return EXIT_OK if ok else EXIT_FAIL


def cmd_run(args):
    sizes = [args.size] if args.size else None
    cfg = _config(args, sizes)
    if args.size is None:
        cfg = cfg.replace(sizes=cfg.sizes[:1])
    cfg = cfg.replace(replicates=1)
    rec = hs.run_one(cfg, cfg.sizes[0], args.replicate)
    result = hs.BatchResult(cfg, [rec], rec.wall_time)
    out = Path(cfg.out)
    hs.emit(result, out)
    (out / "profile.json").write_text(json.dumps(hs.profile_document(cfg, rec)) + "\n")
    print(json.dumps(rec.row(), indent=1))
    return result.exit_code


def cmd_batch(args):
    cfg = _config(args, args.size)

    def progress(rec):
        log.info(
            "N=%d replicate=%d %s after %d iterations, certificate %s",
            rec.N,
            rec.replicate,
            rec.status,
            rec.iterations,
            "passed" if rec.certified else "FAILED",
        )

    result = hs.run_experiments(cfg, progress)
    hs.emit(result)
    for row in result.summary():
        print(
            "N={N:<7d} thr={threshold:<8g} reached {reached}/{runs}  "
            "mean={mean}  min={min}  max={max}".format(**row)
        )
    print(
        f"converged: {sum(r.converged for r in result.records)}/{len(result.records)}  "
        f"certified: {sum(r.certified for r in result.records)}/{len(result.records)}"
    )
    return result.exit_code


def cmd_certify(args):
    try:
        doc = json.loads(args.profile.read_text())
    except OSError as exc:
        raise InvalidInputError(f"cannot read {args.profile}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"{args.profile}: not valid JSON ({exc})") from exc
    cert = hs.certify_document(doc, tol=args.tol)
    print(json.dumps(cert.as_dict(), indent=1))
    return EXIT_OK if cert.passed else EXIT_FAIL


COMMANDS = {"validate": cmd_validate, "run": cmd_run, "batch": cmd_batch, "certify": cmd_certify}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (InvalidInputError, InfeasibleSetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except DesignViolation as exc:
        print(f"design violation: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
