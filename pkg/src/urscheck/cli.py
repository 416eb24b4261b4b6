"""Command line: generate, count, sample, test, report.

Exit codes of ``test``: 0 all Consistent, 2 any Rejected, 3 any
Indeterminate (and none Rejected), 1 configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .cnf import CnfFormula, DimacsError, read_dimacs
from .counting import CountingBudgetExceeded, SpectrumEngine, marginals
from .generator import GeneratorConfig, GeneratorError, generate, random_assignments, write_dataset
from .orchestrator import CampaignConfig, GroundTruthCache, run_pipeline
from .report import ReportError, load_report, render_table, write_summary
from .samplers import OUTPUT_FORMATS, SamplerError, SamplerSpec, collect_sample, format_models
from .suite import TEST_IDS, Verdict

RESULTS_ENV = "URSCHECK_RESULTS"

EXIT_OK, EXIT_CONFIG, EXIT_REJECTED, EXIT_INDETERMINATE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # exit status 2 is reserved for "Rejected"
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _add_sampler_args(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--builtin", choices=["uniform", "skew", "duplicator", "firstfall"], default=None)
    g.add_argument("--cmd", help="external sampler command with {cnf} and {n} placeholders")
    p.add_argument("--format", choices=OUTPUT_FORMATS, default="literals", help="external output format")
    p.add_argument("--strength", type=float, default=None,
                   help="bias strength (default 0.5 for skew, 9 for duplicator)")
    p.add_argument("--batch-size", type=int, default=1000)
    p.add_argument("--timeout", type=float, default=60.0, help="seconds per sampler call")
    p.add_argument("--invalid-policy", choices=["fail", "filter"], default="fail")
    p.add_argument("--name", help="sampler id used in results")
    p.add_argument("--seed", type=int, default=0)


def _sampler_spec(args) -> SamplerSpec:
    common = dict(batch_size=args.batch_size, timeout=args.timeout, invalid_policy=args.invalid_policy,
                  rng_seed=args.seed, name=args.name)
    if args.cmd:
        return SamplerSpec("external", command=args.cmd, output_format=args.format, **common)
    builtin = args.builtin or "uniform"
    if builtin == "uniform":
        return SamplerSpec("builtin_uniform", **common)
    strength = args.strength
    if strength is None:
        strength = {"skew": 0.5, "duplicator": 9.0, "firstfall": 0.0}[builtin]
    return SamplerSpec("builtin_biased", variant=builtin, strength=strength, **common)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="urscheck", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="write a synthetic k-CNF dataset")
    p.add_argument("--vars", type=int, required=True)
    p.add_argument("--clauses", type=int, required=True)
    p.add_argument("--width", type=int, default=3)
    p.add_argument("--count", type=int, default=300)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--planted", type=int, default=0, metavar="N", help="number of planted assignments")
    p.add_argument("--satisfiable", action="store_true")
    p.add_argument("--name", help="dataset name (default r<vars>c<clauses>)")
    p.add_argument("--out", help="output directory (default ./<name>)")

    p = sub.add_parser("count", help="exact spectrum and marginals as JSON")
    p.add_argument("cnf")
    p.add_argument("--no-marginals", action="store_true")
    p.add_argument("--max-decisions", type=int)

    p = sub.add_parser("sample", help="print models drawn by a built-in or external sampler")
    p.add_argument("cnf")
    p.add_argument("-n", "--n", type=int, default=1000)
    p.add_argument("--output-format", choices=OUTPUT_FORMATS, default="literals")
    _add_sampler_args(p)

    p = sub.add_parser("test", help="run a test campaign over a dataset")
    p.add_argument("--dataset", required=True, help="directory of .cnf files (or a single file)")
    _add_sampler_args(p)
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--tests", default=",".join(TEST_IDS), help="comma-separated, in execution order")
    p.add_argument("--early-stop", action="store_true")
    p.add_argument("--budget", type=float, default=600.0, help="seconds of sampling per unit")
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    p.add_argument("--sample-size", action="append", default=[], metavar="TEST=N")
    p.add_argument("--floor", type=int, default=1000)
    p.add_argument("--vf-cap", type=int, default=100_000)
    p.add_argument("--enum-cap", type=int, default=2**20)
    p.add_argument("--sfpc-bins", choices=["strict", "merge_tails"], default="strict")
    p.add_argument("--results", default=None, help=f"result directory (default ${RESULTS_ENV} or ./results)")

    p = sub.add_parser("report", help="re-aggregate a result directory and print the table")
    p.add_argument("results", nargs="?", default=None)
    p.add_argument("--json", action="store_true", help="print the combined results as JSON")
    return parser


def _results_dir(arg) -> Path:
    return Path(arg or os.environ.get(RESULTS_ENV) or "results")


def cmd_generate(args) -> int:
    name = args.name or f"r{args.vars}c{args.clauses}" + (f"b{args.planted}" if args.planted else "")
    planted = []
    if args.planted:
        planted = random_assignments(args.vars, args.planted, int(np.random.SeedSequence([args.seed, 1]).generate_state(1)[0]))
    try:
        cfg = GeneratorConfig(args.vars, args.clauses, args.width, planted, args.satisfiable, args.count, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    formulae = generate(cfg, name)
    out = write_dataset(formulae, args.out or name, name, cfg)
    print(f"wrote {len(formulae)} formulae to {out}")
    return EXIT_OK


def cmd_count(args) -> int:
    f = read_dimacs(args.cnf)
    engine = SpectrumEngine(args.max_decisions)
    spec = engine.spectrum(f)
    doc = {"formula": f.name, "num_vars": f.num_vars, "num_clauses": len(f.clauses)}
    doc.update(spec.to_json())
    if not args.no_marginals:
        doc["marginals"] = marginals(f, engine=engine).to_json()
    print(json.dumps(doc, indent=2))
    return EXIT_OK


def cmd_sample(args) -> int:
    f = read_dimacs(args.cnf)
    spec = _sampler_spec(args)
    s = collect_sample(spec, f, args.n, np.random.default_rng(args.seed), cnf_path=args.cnf)
    sys.stdout.write(format_models(s.bits, args.output_format))
    return EXIT_OK


def _load_dataset(path: Path) -> tuple[str, list[CnfFormula], list[str]]:
    if path.is_file():
        return path.stem, [read_dimacs(path)], [str(path)]
    if not path.is_dir():
        raise UsageError(f"dataset {path} does not exist")
    files = []
    manifest = path / "manifest.json"
    if manifest.exists():
        files = [path / fn for fn in json.loads(manifest.read_text()).get("files", [])]
    if not files:
        files = sorted(path.glob("*.cnf"))
    if not files:
        raise UsageError(f"no .cnf files in {path}")
    return path.name, [read_dimacs(p) for p in files], [str(p) for p in files]


def _parse_sizes(items) -> dict:
    sizes = {}
    for item in items:
        test, _, n = item.partition("=")
        if test not in TEST_IDS or not n.isdigit() or int(n) < 1:
            raise UsageError(f"bad --sample-size {item!r}, expected TEST=N")
        sizes[test] = int(n)
    return sizes


def cmd_test(args) -> int:
    dataset_path = Path(args.dataset)
    did, formulae, paths = _load_dataset(dataset_path)
    try:
        spec = _sampler_spec(args)
        cfg = CampaignConfig(
            alpha=args.alpha,
            tests=tuple(t.strip() for t in args.tests.split(",") if t.strip()),
            early_stop=args.early_stop,
            sample_sizes=_parse_sizes(args.sample_size),
            unit_budget=args.budget,
            parallelism=args.jobs,
            floor=args.floor,
            vf_cap=args.vf_cap,
            enumeration_cap=args.enum_cap,
            sfpc_bin_policy=args.sfpc_bins,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    results = _results_dir(args.results)
    combined = run_pipeline(spec, formulae, cfg, dataset_id=did, result_dir=results,
                            cache=GroundTruthCache(cfg.enumeration_cap), cnf_paths=paths,
                            dataset_path=dataset_path)
    write_summary(results, load_report(results))
    sys.stdout.write(render_table(combined, cfg.alpha))
    verdicts = {c.verdict for c in combined}
    if Verdict.REJECTED in verdicts:
        return EXIT_REJECTED
    if Verdict.INDETERMINATE in verdicts:
        return EXIT_INDETERMINATE
    return EXIT_OK


def cmd_report(args) -> int:
    doc = load_report(_results_dir(args.results))
    if args.json:
        print(json.dumps([c.to_json() for c in doc.combined], indent=1, sort_keys=True))
    else:
        sys.stdout.write(render_table(doc.combined))
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "count": cmd_count, "sample": cmd_sample,
            "test": cmd_test, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if not args.verbose:
        warnings.simplefilter("ignore")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"urscheck: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DimacsError, OSError, ValueError, GeneratorError, SamplerError, ReportError,
            CountingBudgetExceeded) as exc:
        print(f"urscheck: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
