"""Command-line interface.

Subcommands:
    verify             run the full verification suite (exit 1 on any FAIL)
    bench              sweep wall-clock timings across designs and dims
    flops              print the cost model for one configuration
    gradcheck          finite-difference + adjoint consistency report
    ssd-equiv          chunked-scan vs sequential-scan deviations
    demo-expressivity  the one-step sigmoid construction vs the best cubic
    kernel-bench       numba vs numpy scan kernel timings

Exit codes: 0 success, 1 a verification-style check failed, 2 usage error.
The default seed comes from MOESSM_SEED when set.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np

from . import kernels
from .bench import (
    SweepConfig,
    compare_backends,
    run_sweep,
    write_kernel_csv,
    write_records_csv,
)
from .checks import derived_seed, run_verification
from .costmodel import DESIGNS, flop_model
from .errors import MoessmError
from .gradients import adjoint_dot_test, finite_diff_check
from .instances import RngInstanceSpec, generate_instance, generate_layer
from .ssd import ChunkPlan, ssd_chunked_core
from .ssm import ssm_scan_sequential
from .theory import expressivity_demo
from .types import TRANSITION_KINDS


def _int_list(text: str):
    toks = [tok.strip() for tok in text.split(",") if tok.strip()]
    if not toks:
        raise argparse.ArgumentTypeError("expected a comma-separated list of ints")
    try:
        return [int(tok) for tok in toks]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad int list {text!r}") from exc


def _default_seed() -> int:
    raw = os.environ.get("MOESSM_SEED", "0")
    try:
        return int(raw)
    except ValueError:
        raise SystemExit(f"MOESSM_SEED must be an integer, got {raw!r}")


def _add_seed(parser: argparse.ArgumentParser):
    parser.add_argument(
        "--seed", type=int, default=None,
        help="RNG seed (default: MOESSM_SEED env var, else 0)",
    )


def _resolve_seed(args) -> int:
    return args.seed if args.seed is not None else _default_seed()


def _write_check_csv(results, path: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("name", "value", "threshold", "comparison", "status"))
        for r in results:
            w.writerow(
                (r.name, repr(r.value), repr(r.threshold), r.comparison,
                 "PASS" if r.passed else "FAIL")
            )


def _cmd_verify(args) -> int:
    seed = _resolve_seed(args)
    results = run_verification(seed=seed, instances=args.instances)
    print(f"verification suite: seed={seed} instances={args.instances}")
    for r in results:
        print(r.line())
    passed = sum(r.passed for r in results)
    print(f"{passed}/{len(results)} checks passed")
    if args.out:
        _write_check_csv(results, args.out)
    return 0 if passed == len(results) else 1


def _cmd_bench(args) -> int:
    seed = _resolve_seed(args)
    config = SweepConfig(
        t_values=tuple(args.T), n_values=tuple(args.N), p_values=tuple(args.P),
        e_values=tuple(args.E), k_values=tuple(args.k),
        designs=tuple(args.designs.split(",")), repeats=args.repeats,
        warmup=args.warmup, seed=seed, transition=args.transition,
        dtype=args.dtype, parallel=args.parallel,
    )
    records = run_sweep(config, progress=print if args.progress else None)
    header = (
        f"{'design':9s} {'T':>6s} {'N':>4s} {'P':>4s} {'E':>3s} {'k':>3s} "
        f"{'median_ms':>10s} {'iqr_ms':>8s} {'gflop/s':>8s}"
    )
    print(header)
    for r in records:
        gflops = r.flops_model / r.wall_ns_median if r.wall_ns_median else 0.0
        print(
            f"{r.design:9s} {r.seq_len:6d} {r.state_dim:4d} {r.channels:4d} "
            f"{r.num_experts:3d} {r.k:3d} {r.wall_ns_median / 1e6:10.2f} "
            f"{r.wall_ns_iqr / 1e6:8.2f} {gflops:8.3f}"
        )
    if args.out:
        write_records_csv(records, args.out)
        print(f"wrote {len(records)} records to {args.out}")
    return 0


def _cmd_flops(args) -> int:
    counts = flop_model(
        args.design, args.T, args.N, args.P, args.E, args.k, kind=args.transition
    )
    print(
        f"design={args.design} T={args.T} N={args.N} P={args.P} "
        f"E={args.E} k={args.k} transition={args.transition}"
    )
    print(f"recurrence {counts.recurrence}")
    print(f"mixing     {counts.mixing}")
    print(f"routing    {counts.routing}")
    print(f"total      {counts.total}")
    return 0


def _cmd_gradcheck(args) -> int:
    seed = _resolve_seed(args)
    spec = RngInstanceSpec(
        seed=derived_seed(seed, 9), seq_len=args.T, state_dim=args.N,
        channels=args.P, num_experts=args.E, rho_target=0.7,
        scale_b=0.5, scale_c=0.5, scale_x=0.5,
    )
    inst = generate_layer(spec)
    ok = True
    rows = []
    for label, k in (("dense", None), ("top1", 1)):
        report = finite_diff_check(
            inst.params, inst.router, inst.transition, inst.batch,
            k=k, step=args.step, coords=args.coords, seed=derived_seed(seed, 10),
        )
        print(f"finite differences, {label} routing (step={args.step:g}):")
        for group, res in report.items():
            status = "PASS" if res.max_rel_err <= args.tol else "FAIL"
            ok &= res.max_rel_err <= args.tol
            print(
                f"  {status} {group:<14s} max_rel_err={res.max_rel_err:.3e} "
                f"checked={res.checked} rejected={res.rejected}"
            )
            rows.append((label, group, res.max_rel_err, res.checked, res.rejected))
    dots = adjoint_dot_test(
        inst.params, inst.router, inst.transition, inst.batch,
        k=1, seed=derived_seed(seed, 11),
    )
    print("adjoint dot test (forward FD vs backward, per group):")
    for group, rel in dots.items():
        status = "PASS" if rel <= 1e-10 else "FAIL"
        ok &= rel <= 1e-10
        print(f"  {status} {group:<14s} rel_discrepancy={rel:.3e}")
        rows.append(("dot", group, rel, 1, 0))
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("mode", "group", "value", "checked", "rejected"))
            for mode, group, value, checked, rejected in rows:
                w.writerow((mode, group, repr(float(value)), checked, rejected))
    return 0 if ok else 1


def _cmd_ssd_equiv(args) -> int:
    seed = _resolve_seed(args)
    worst = {q: 0.0 for q in args.Q}
    for q in args.Q:
        if not (1 <= q <= args.T):
            raise SystemExit(f"chunk {q} out of range [1, T={args.T}]")
    for i in range(args.instances):
        spec = RngInstanceSpec(
            seed=derived_seed(seed, 6, i), seq_len=args.T, state_dim=8,
            channels=4, num_experts=1, transition="scalar", rho_target=0.9,
        )
        inst = generate_instance(spec)
        s = inst.streams[0]
        u = s.b * s.xinj[:, None, :]
        y_seq, _ = ssm_scan_sequential(u, s.c, None, inst.transition, record=False)
        scale = max(float(np.max(np.abs(y_seq))), 1e-30)
        for q in args.Q:
            y_chunk, _ = ssd_chunked_core(
                inst.transition, u, s.c, ChunkPlan(seq_len=args.T, chunk=q)
            )
            dev = float(np.max(np.abs(y_chunk - y_seq))) / scale
            worst[q] = max(worst[q], dev)
    ok = True
    print(f"chunked vs sequential, T={args.T}, {args.instances} instances:")
    for q, dev in worst.items():
        status = "PASS" if dev <= args.tol else "FAIL"
        ok &= dev <= args.tol
        print(f"  {status} Q={q:<6d} max_rel_dev={dev:.3e} (need <= {args.tol:g})")
    return 0 if ok else 1


def _cmd_demo_expressivity(args) -> int:
    grid = np.linspace(args.xmin, args.xmax, args.points)
    report = expressivity_demo(grid)
    print("one-step two-expert construction, output vs sigmoid:")
    stride = max(1, args.points // 9)
    print(f"  {'x':>8s} {'output':>12s} {'sigmoid':>12s} {'cubic_fit':>12s}")
    fit = np.polyval(report.poly_coeffs, report.grid)
    for i in range(0, args.points, stride):
        print(
            f"  {report.grid[i]:8.3f} {report.outputs[i]:12.8f} "
            f"{report.sigma[i]:12.8f} {fit[i]:12.8f}"
        )
    print(f"max |output - sigmoid| = {report.max_sigma_dev:.3e}")
    print(f"best cubic sup gap     = {report.poly_gap:.6f}")
    print(f"strictly increasing    = {report.monotone}")
    return 0


def _cmd_kernel_bench(args) -> int:
    records = compare_backends(
        seq_len=args.T, state_dim=args.N, channels=args.P,
        kinds=tuple(args.kinds.split(",")), repeats=args.repeats,
        seed=_resolve_seed(args),
    )
    print(f"available backends: {', '.join(kernels.available_backends())}")
    print(f"{'kernel':18s} {'backend':8s} {'median_ms':>10s} {'iqr_ms':>8s}")
    by_kernel = {}
    for r in records:
        print(
            f"{r.kernel:18s} {r.backend:8s} {r.wall_ns_median / 1e6:10.2f} "
            f"{r.wall_ns_iqr / 1e6:8.2f}"
        )
        by_kernel.setdefault(r.kernel, {})[r.backend] = r.wall_ns_median
    for kernel, times in by_kernel.items():
        if "numba" in times and "numpy" in times:
            print(f"{kernel}: numba speedup x{times['numpy'] / times['numba']:.1f}")
    if args.out:
        write_kernel_csv(records, args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="moessm",
        description="Mixture-of-experts selective SSM kernels: verification and benchmarks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", help="run the verification suite")
    _add_seed(p)
    p.add_argument("--instances", type=int, default=100,
                   help="instances per sweep check (default 100)")
    p.add_argument("--out", help="write results CSV here")
    p.set_defaults(fn=_cmd_verify)

    p = sub.add_parser("bench", help="wall-clock design sweep")
    _add_seed(p)
    p.add_argument("--T", type=_int_list, default=[1024], help="sequence lengths")
    p.add_argument("--N", type=_int_list, default=[32], help="state dims")
    p.add_argument("--P", type=_int_list, default=[64], help="channel counts")
    p.add_argument("--E", type=_int_list, default=[2, 4], help="expert counts")
    p.add_argument("--k", type=_int_list, default=[1], help="retained experts")
    p.add_argument("--designs", default="mixed,separated")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--warmup", type=int, default=1)
    p.add_argument("--transition", choices=TRANSITION_KINDS, default="diagonal")
    p.add_argument("--dtype", choices=("float64", "float32"), default="float64")
    p.add_argument("--parallel", action="store_true",
                   help="allow BLAS threading (default: pinned to 1 thread)")
    p.add_argument("--progress", action="store_true")
    p.add_argument("--out", help="write records CSV here")
    p.set_defaults(fn=_cmd_bench)

    p = sub.add_parser("flops", help="print the cost model")
    p.add_argument("--design", choices=DESIGNS, required=True)
    p.add_argument("--T", type=int, required=True)
    p.add_argument("--N", type=int, required=True)
    p.add_argument("--P", type=int, required=True)
    p.add_argument("--E", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--transition", choices=TRANSITION_KINDS, default="dense")
    p.set_defaults(fn=_cmd_flops)

    p = sub.add_parser("gradcheck", help="gradient verification report")
    _add_seed(p)
    p.add_argument("--T", type=int, default=32)
    p.add_argument("--N", type=int, default=8)
    p.add_argument("--P", type=int, default=13)
    p.add_argument("--E", type=int, default=4)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--coords", type=int, default=50)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--out", help="write report CSV here")
    p.set_defaults(fn=_cmd_gradcheck)

    p = sub.add_parser("ssd-equiv", help="chunked vs sequential scan deviations")
    _add_seed(p)
    p.add_argument("--T", type=int, default=256)
    p.add_argument("--Q", type=_int_list, default=[1, 8, 32, 256],
                   help="chunk sizes")
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--tol", type=float, default=1e-8)
    p.set_defaults(fn=_cmd_ssd_equiv)

    p = sub.add_parser("demo-expressivity", help="sigmoid construction demo")
    p.add_argument("--points", type=int, default=161)
    p.add_argument("--xmin", type=float, default=-8.0)
    p.add_argument("--xmax", type=float, default=8.0)
    p.set_defaults(fn=_cmd_demo_expressivity)

    p = sub.add_parser("kernel-bench", help="numba vs numpy kernel timings")
    _add_seed(p)
    p.add_argument("--T", type=int, default=2048)
    p.add_argument("--N", type=int, default=32)
    p.add_argument("--P", type=int, default=64)
    p.add_argument("--kinds", default="dense,diagonal,scalar")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--out", help="write records CSV here")
    p.set_defaults(fn=_cmd_kernel_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except MoessmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
