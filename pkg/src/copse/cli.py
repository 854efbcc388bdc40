"""Operator command line.

Subcommands:

* ``compile``  stage a `.forest` model into a `.copse` manifest
* ``infer``    run one or more queries against a manifest
* ``check``    compare the packed pipeline against the traversal oracle
* ``bench``    measure a model's ledger against the closed-form predictions

Exit codes: 0 success, 1 check or report failure, 2 input error, 3 depth
budget exceeded.
"""

from __future__ import annotations

import argparse
import random
import sys
from pathlib import Path

from . import baseline, costs, gen, runtime
from .forest import ForestError, compute_props, parse_forest
from .staging import StagingError, compile_forest, read_manifest, write_manifest
from .vm import DepthBudgetExceeded, VecMachine

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_INPUT = 2
EXIT_BUDGET = 3


def _read(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputFault(f"cannot read {path}: {exc}") from None


class InputFault(Exception):
    pass


def cmd_compile(args) -> int:
    model = compile_forest(parse_forest(_read(args.forest)),
                           p=args.precision, frac_bits=args.frac_bits,
                           k_declared=args.kdeclared)
    out = Path(args.output) if args.output else Path(args.forest).with_suffix(".copse")
    out.write_text(write_manifest(model), encoding="utf-8")
    m = model.meta
    print(f"compiled {args.forest} -> {out} "
          f"(b={m.b} q={m.q} d={m.d} K={m.max_multiplicity} p={m.p})")
    return EXIT_OK


def cmd_infer(args) -> int:
    model = read_manifest(_read(args.model))
    cfg = runtime.PartyConfig(mode=args.mode, k_declared=args.kdeclared)
    blocks = runtime.parse_queries(_read(args.query))
    for i, values in enumerate(blocks):
        vm = VecMachine(depth_budget=args.max_depth)
        query = runtime.encode_query(values, model, vm)
        run = runtime.infer(model, query, cfg, vm)
        result = runtime.decode(vm.decrypt(run.cipher), model)
        if i:
            print()
        print(runtime.format_result(result, run.ledger))
    return EXIT_OK


def _check_one(forest, props, model, rng, mode) -> bool:
    values = gen.random_query(rng, props.n_features, model.meta.p,
                              model.meta.frac_bits)
    vm = VecMachine()
    query = runtime.encode_query(values, model, vm)
    run = runtime.infer(model, query, runtime.PartyConfig(mode=mode), vm)
    got = vm.decrypt(run.cipher)
    want = runtime.oracle_bitvector(forest, values, model.meta.p,
                                    model.meta.frac_bits)
    return bool((got == want).all())


def cmd_check(args) -> int:
    rng = random.Random(args.seed)
    passed = 0
    total = 0
    if args.random is not None:
        for trial in range(args.random):
            forest = gen.random_forest(rng, p=args.precision)
            props = compute_props(forest)
            model = compile_forest(forest, p=args.precision,
                                   frac_bits=args.frac_bits)
            mode = runtime.MODES[trial % 2]
            total += 1
            passed += _check_one(forest, props, model, rng, mode)
    else:
        if not args.forest:
            raise InputFault("check needs --random N or a MODEL with --forest")
        model = read_manifest(_read(args.model))
        forest = parse_forest(_read(args.forest))
        props = compute_props(forest)
        for trial in range(args.queries):
            mode = runtime.MODES[trial % 2]
            total += 1
            passed += _check_one(forest, props, model, rng, mode)
    print(f"{passed}/{total} match")
    return EXIT_OK if passed == total else EXIT_CHECK_FAILED


def cmd_bench(args) -> int:
    forest = parse_forest(_read(args.forest))
    props = compute_props(forest)
    model = compile_forest(forest, p=args.precision, frac_bits=args.frac_bits)
    rng = random.Random(args.seed)
    values = gen.random_query(rng, props.n_features, args.precision,
                              args.frac_bits)
    cfg = runtime.PartyConfig(mode=args.mode)

    snapshots = []
    report = None
    for _ in range(args.reps):
        vm = VecMachine()
        query = runtime.encode_query(values, model, vm)
        run = runtime.infer(model, query, cfg, vm)
        snapshots.append(vm.ledger.snapshot())
        report = costs.build_report(model.meta, run)
    stable = all(snap == snapshots[0] for snap in snapshots)

    print(report.to_text())
    print(f"reps {args.reps} deterministic {'yes' if stable else 'NO'}")

    if args.baseline:
        vm = VecMachine()
        query = runtime.encode_query(values, model, vm)
        decisions = _preorder_decisions(model, query, cfg, vm)
        ptrees = baseline.poly_compile(forest)
        baseline.poly_eval(ptrees, decisions, len(forest.labels), vm)
        print("-- baseline (per-tree polynomials, shared comparison) --")
        print(vm.ledger.to_text())
        ours = snapshots[0]["mult_ct_ct"] + snapshots[0]["mult_ct_pt"]
        theirs = (vm.ledger.counts["mult_ct_ct"] + vm.ledger.counts["mult_ct_pt"])
        print(f"compare mult packed {ours} baseline {theirs}")

    if not stable or (report is not None and not report.ok()):
        return EXIT_CHECK_FAILED
    return EXIT_OK


def _preorder_decisions(model, query, cfg, vm):
    from . import kernels
    from .runtime import _stage_matrix, _stage_planes

    encrypted = cfg.mode == runtime.MODE_ENCRYPTED
    thresh = _stage_planes(model.thresholds, vm, encrypted)
    reshuf = _stage_matrix(model.reshuf, vm, encrypted)
    decisions = kernels.sec_comp(query.planes, thresh, vm)
    return kernels.mat_mul(reshuf.diagonals, reshuf.rows, decisions, vm)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="copse", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    pc = sub.add_parser("compile", help="stage a .forest model into a .copse manifest")
    pc.add_argument("forest")
    pc.add_argument("-o", "--output")
    pc.add_argument("-p", "--precision", type=int, default=8)
    pc.add_argument("--frac-bits", type=int, default=0)
    pc.add_argument("--kdeclared", type=int, default=None)
    pc.set_defaults(func=cmd_compile)

    pi = sub.add_parser("infer", help="classify query file(s) against a manifest")
    pi.add_argument("model")
    pi.add_argument("query")
    pi.add_argument("--mode", choices=runtime.MODES, default=runtime.MODE_ENCRYPTED)
    pi.add_argument("--kdeclared", type=int, default=None)
    pi.add_argument("--max-depth", type=int, default=None)
    pi.set_defaults(func=cmd_infer)

    pk = sub.add_parser("check", help="compare packed inference to the traversal oracle")
    pk.add_argument("model", nargs="?")
    pk.add_argument("--forest")
    pk.add_argument("--random", type=int, default=None, metavar="N")
    pk.add_argument("--queries", type=int, default=20)
    pk.add_argument("--seed", type=int, default=7)
    pk.add_argument("-p", "--precision", type=int, default=8)
    pk.add_argument("--frac-bits", type=int, default=0)
    pk.set_defaults(func=cmd_check)

    pb = sub.add_parser("bench", help="measure ledgers against closed-form predictions")
    pb.add_argument("forest")
    pb.add_argument("-p", "--precision", type=int, default=8)
    pb.add_argument("--frac-bits", type=int, default=0)
    pb.add_argument("--mode", choices=runtime.MODES, default=runtime.MODE_ENCRYPTED)
    pb.add_argument("--reps", type=int, default=27)
    pb.add_argument("--seed", type=int, default=7)
    pb.add_argument("--baseline", action="store_true")
    pb.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DepthBudgetExceeded as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (ForestError, StagingError, runtime.RuntimeFault, InputFault) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
