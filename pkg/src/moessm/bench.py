"""Wall-clock benchmarks: design sweep and kernel-backend comparison.

Measurement discipline (validated on a 1-core box before freezing defaults):
every cell gets warmup runs before timing, the reported figure is the median
of >= 3 repeats with the interquartile range as spread, and BLAS threading is
pinned to one thread unless parallel mode is requested, so numbers are
comparable across cells. The same seeded instance is reused for every design
within a cell, so output checksums differ only by design semantics.

CSV files use comma separators, a header row, '.' decimals (floats written
with repr for exact round-trip), no quoting, and LF line endings.
"""

from __future__ import annotations

import csv
import hashlib
import io
import itertools
import os
import statistics
import time
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from threadpoolctl import threadpool_limits

from . import kernels
from .costmodel import DESIGNS, flop_model
from .errors import InvalidInputError
from .instances import LayerInstance, RngInstanceSpec, generate_layer
from .moe import moe_param_forward, moe_separated_forward
from .router import router_logits, softmax_route, topk_mask
from .types import TRANSITION_KINDS, TransitionSpec

DTYPES = ("float64", "float32")


@dataclass(frozen=True)
class SweepConfig:
    """Axes and measurement settings for a design sweep."""

    t_values: tuple
    n_values: tuple
    p_values: tuple
    e_values: tuple
    k_values: tuple
    designs: tuple = DESIGNS
    repeats: int = 3
    warmup: int = 1
    seed: int = 0
    transition: str = "diagonal"
    dtype: str = "float64"
    parallel: bool = False

    def __post_init__(self):
        for name in ("t_values", "n_values", "p_values", "e_values", "k_values"):
            vals = tuple(int(v) for v in getattr(self, name))
            if not vals:
                raise InvalidInputError(f"{name} must not be empty")
            if any(v < 1 for v in vals):
                raise InvalidInputError(f"{name} entries must be positive, got {vals}")
            object.__setattr__(self, name, vals)
        designs = tuple(self.designs)
        if not designs or any(d not in DESIGNS for d in designs):
            raise InvalidInputError(
                f"designs must be a nonempty subset of {DESIGNS}, got {designs!r}"
            )
        object.__setattr__(self, "designs", designs)
        if max(self.k_values) > min(self.e_values):
            raise InvalidInputError(
                f"every k must be <= every E: k_values={self.k_values}, "
                f"e_values={self.e_values}"
            )
        if self.repeats < 3:
            raise InvalidInputError(f"repeats must be >= 3, got {self.repeats}")
        if self.warmup < 1:
            raise InvalidInputError(f"warmup must be >= 1, got {self.warmup}")
        if self.transition not in TRANSITION_KINDS:
            raise InvalidInputError(f"unknown transition {self.transition!r}")
        if self.dtype not in DTYPES:
            raise InvalidInputError(f"dtype must be one of {DTYPES}, got {self.dtype!r}")

    def cells(self):
        return itertools.product(
            self.t_values, self.n_values, self.p_values, self.e_values, self.k_values
        )


@dataclass(frozen=True)
class BenchRecord:
    design: str
    seq_len: int
    state_dim: int
    channels: int
    num_experts: int
    k: int
    flops_model: int
    wall_ns_median: float
    wall_ns_iqr: float
    checksum: str
    backend: str
    threads: int


BENCH_FIELDS = (
    "design", "T", "N", "P", "E", "k", "flops_model",
    "wall_ns_median", "wall_ns_iqr", "checksum", "backend", "threads",
)


class KernelBenchRecord(NamedTuple):
    kernel: str
    backend: str
    seq_len: int
    state_dim: int
    channels: int
    wall_ns_median: float
    wall_ns_iqr: float


KERNEL_BENCH_FIELDS = (
    "kernel", "backend", "T", "N", "P", "wall_ns_median", "wall_ns_iqr",
)


def _checksum(y: np.ndarray) -> str:
    return hashlib.sha256(y.tobytes()).hexdigest()[:16]


def _cell_seed(seed: int, dims: tuple) -> int:
    ss = np.random.SeedSequence(seed, spawn_key=tuple(int(d) for d in dims))
    return int(ss.generate_state(1, np.uint64)[0])


def _time_runs(fn: Callable[[], np.ndarray], warmup: int, repeats: int):
    for _ in range(warmup):
        y = fn()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter_ns()
        y = fn()
        times.append(time.perf_counter_ns() - t0)
    med = float(statistics.median(times))
    q75, q25 = np.percentile(times, [75, 25])
    return med, float(q75 - q25), y


def _transition_for(kind: str, instance: LayerInstance) -> TransitionSpec:
    # generate_layer already produced the right kind; this is just a guard.
    if instance.transition.kind != kind:
        raise InvalidInputError(
            f"instance transition {instance.transition.kind!r} != requested {kind!r}"
        )
    return instance.transition


def run_sweep(config: SweepConfig, progress: Callable[[str], None] | None = None):
    """Time every (T, N, P, E, k) x design cell; returns BenchRecords in order."""
    backend = kernels.active_backend()
    threads = (os.cpu_count() or 1) if config.parallel else 1
    records = []
    limit = None if config.parallel else 1
    with threadpool_limits(limits=limit):
        for dims in config.cells():
            t_len, n, p, e_count, k = dims
            spec = RngInstanceSpec(
                seed=_cell_seed(config.seed, dims),
                seq_len=t_len, state_dim=n, channels=p, num_experts=e_count,
                transition=config.transition,
            )
            inst = generate_layer(spec, dtype=np.dtype(config.dtype))
            transition = _transition_for(config.transition, inst)
            for design in config.designs:
                if design == "mixed":
                    def fn():
                        plan = topk_mask(
                            softmax_route(router_logits(inst.router, inst.batch)), k
                        )
                        return moe_param_forward(
                            inst.params, transition, plan, inst.batch,
                            record=False, evaluator="sequential",
                        ).y
                else:
                    def fn():
                        plan = topk_mask(
                            softmax_route(router_logits(inst.router, inst.batch)), k
                        )
                        return moe_separated_forward(
                            inst.params, transition, plan, inst.batch, record=False
                        ).y
                med, iqr, y = _time_runs(fn, config.warmup, config.repeats)
                counts = flop_model(
                    design, t_len, n, p, e_count, k, kind=config.transition
                )
                rec = BenchRecord(
                    design=design, seq_len=t_len, state_dim=n, channels=p,
                    num_experts=e_count, k=k, flops_model=counts.total,
                    wall_ns_median=med, wall_ns_iqr=iqr, checksum=_checksum(y),
                    backend=backend, threads=threads,
                )
                records.append(rec)
                if progress is not None:
                    progress(
                        f"{design:9s} T={t_len} N={n} P={p} E={e_count} k={k} "
                        f"median={med / 1e6:.1f} ms"
                    )
    return records


def _record_row(rec: BenchRecord) -> list[str]:
    return [
        rec.design, str(rec.seq_len), str(rec.state_dim), str(rec.channels),
        str(rec.num_experts), str(rec.k), str(rec.flops_model),
        repr(rec.wall_ns_median), repr(rec.wall_ns_iqr), rec.checksum,
        rec.backend, str(rec.threads),
    ]


def write_records_csv(records, path_or_file) -> None:
    """Write BenchRecords in the package CSV dialect."""
    own = isinstance(path_or_file, (str, os.PathLike))
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BENCH_FIELDS)
        for rec in records:
            w.writerow(_record_row(rec))
    finally:
        if own:
            fh.close()


def read_records_csv(path_or_file) -> list:
    """Parse a BenchRecord CSV back to equal dataclass instances."""
    own = isinstance(path_or_file, (str, os.PathLike))
    fh = open(path_or_file, "r", newline="") if own else path_or_file
    try:
        rows = list(csv.reader(fh))
    finally:
        if own:
            fh.close()
    if not rows or tuple(rows[0]) != BENCH_FIELDS:
        raise InvalidInputError(
            f"unexpected CSV header {rows[0] if rows else None!r}"
        )
    out = []
    for row in rows[1:]:
        if len(row) != len(BENCH_FIELDS):
            raise InvalidInputError(f"malformed CSV row {row!r}")
        out.append(
            BenchRecord(
                design=row[0], seq_len=int(row[1]), state_dim=int(row[2]),
                channels=int(row[3]), num_experts=int(row[4]), k=int(row[5]),
                flops_model=int(row[6]), wall_ns_median=float(row[7]),
                wall_ns_iqr=float(row[8]), checksum=row[9], backend=row[10],
                threads=int(row[11]),
            )
        )
    return out


def records_csv_bytes(records) -> bytes:
    buf = io.StringIO()
    write_records_csv(records, buf)
    return buf.getvalue().encode()


def compare_backends(
    seq_len: int = 2048,
    state_dim: int = 32,
    channels: int = 64,
    kinds: tuple = TRANSITION_KINDS,
    repeats: int = 5,
    warmup: int = 1,
    seed: int = 0,
) -> list:
    """Time the scan kernels themselves on both backends, same inputs."""
    if repeats < 3:
        raise InvalidInputError(f"repeats must be >= 3, got {repeats}")
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((seq_len, state_dim, channels))
    cs = rng.standard_normal((seq_len, state_dim, channels))
    h0 = np.zeros((state_dim, channels))
    values = {
        "dense": 0.9 * rng.standard_normal((state_dim, state_dim)) / np.sqrt(state_dim),
        "diagonal": rng.uniform(-0.9, 0.9, state_dim),
        "scalar": rng.uniform(0.0, 0.9, seq_len),
    }
    kernel_of = {"dense": "scan_dense_last", "diagonal": "scan_diag_last",
                 "scalar": "scan_scalar_last"}
    records = []
    with threadpool_limits(limits=1):
        for kind in kinds:
            if kind not in TRANSITION_KINDS:
                raise InvalidInputError(f"unknown transition kind {kind!r}")
            a = values[kind]
            for backend_name in kernels.available_backends():
                fn = getattr(kernels.get_backend(backend_name), kernel_of[kind])
                med, iqr, _ = _time_runs(
                    lambda: fn(a, u, cs, h0)[0], warmup, repeats
                )
                records.append(
                    KernelBenchRecord(
                        kernel=kernel_of[kind], backend=backend_name,
                        seq_len=seq_len, state_dim=state_dim, channels=channels,
                        wall_ns_median=med, wall_ns_iqr=iqr,
                    )
                )
    return records


def write_kernel_csv(records, path_or_file) -> None:
    own = isinstance(path_or_file, (str, os.PathLike))
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(KERNEL_BENCH_FIELDS)
        for rec in records:
            w.writerow([
                rec.kernel, rec.backend, str(rec.seq_len), str(rec.state_dim),
                str(rec.channels), repr(rec.wall_ns_median), repr(rec.wall_ns_iqr),
            ])
    finally:
        if own:
            fh.close()
