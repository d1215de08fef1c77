"""Command line entry point: ``akpz <subcommand> [--config PATH] [--seed U64] [--jobs INT] [--out DIR]``."""
import argparse
import json
import sys

from . import harness


def _u64(s):
    v = int(s)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def _positive(s):
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def build_parser():
    p = argparse.ArgumentParser(prog="akpz", description="Regularized AKPZ / stochastic Burgers toolkit")
    sub = p.add_subparsers(dest="command", required=True)
    helps = {
        "simulate": "run an ensemble and write mode energies and B^2 series",
        "diffusivity": "Green-Kubo D(t) by both estimators and its Laplace transform",
        "variance": "height variance V(t) for a rescaled bump test function",
        "hierarchy": "truncated chaos hierarchy sandwich bounds",
        "mct": "evolve the mode-coupling closure and fit the exponent",
        "check": "run the acceptance suite and print the dashboard",
        "report": "summarise an existing results directory",
    }
    for name, h in helps.items():
        sp = sub.add_parser(name, help=h)
        if name == "report":
            sp.add_argument("dir")
            continue
        sp.add_argument("--config", metavar="PATH", help="JSON config or a manifest to replay")
        sp.add_argument("--seed", type=_u64, metavar="U64")
        sp.add_argument("--jobs", type=_positive, metavar="INT")
        sp.add_argument("--out", metavar="DIR")
        sp.add_argument("--quiet", action="store_true", help="do not echo the resolved config")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            text, code = harness.report(args.dir)
            print(text)
            return code
        cfg = harness.parse_config(args.config, kind=args.command, seed=args.seed,
                                   jobs=args.jobs, out=args.out)
        if not args.quiet:
            print(json.dumps(cfg.data, indent=2, sort_keys=True), file=sys.stderr)
        harness.run(cfg)
        text, code = harness.report(cfg.out)
        print(text)
        return code
    except (ValueError, harness.NoResults, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except harness.RunFailed as e:
        print(f"run failed: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
