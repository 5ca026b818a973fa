"""Exact FLOP counts for both designs, in integer arithmetic.

Counting conventions (multiply-accumulate = 2 flops, published so every
number is auditable):

  c_step(N, P): one state update h <- A h + U
      dense      P * (2 N^2 + N)   N^2 MACs per channel plus the add of U
      diagonal   P * (2 N + N)
      scalar     P * 3 N
  c_mix(k, N, P): fold k active experts into (U~, C~)
      injection  k * (2 N P + N P)  elementwise B*x then weighted accumulate
      readout    k * N P            weighted accumulate of C streams
  c_route(E, P): logits + stable softmax per step
      2 E P      logit matvec
      3 E        max-shift, exp, normalize
  c_mix_out(k, N, P): separated-design readout mixing per step
      k * 2 N P  k per-expert readouts <C, h>
      k * 2 P    weight and accumulate k output rows

Totals per sequence of length T:
  mixed      T * (c_step + c_mix + c_route)        one trajectory
  separated  T * (E * c_step + c_mix_out + c_route)  E trajectories

The recurrence terms are exact multiples: separated/mixed = E, independent
of everything else. Final readout of the mixed design is part of c_step's
consumer (the scan also emits Y); both designs price Y production inside
their mixing/readout terms consistently.
"""

from __future__ import annotations

from typing import NamedTuple

from .errors import InvalidInputError
from .types import TRANSITION_KINDS

DESIGNS = ("mixed", "separated")


class FlopCounts(NamedTuple):
    recurrence: int
    mixing: int
    routing: int

    @property
    def total(self) -> int:
        return self.recurrence + self.mixing + self.routing


def c_step(kind: str, state_dim: int, channels: int) -> int:
    """Flops of one state update under the given transition structure."""
    if kind == "dense":
        return channels * (2 * state_dim * state_dim + state_dim)
    if kind in ("diagonal", "scalar"):
        return channels * 3 * state_dim
    raise InvalidInputError(f"unknown transition kind {kind!r}")


def c_mix(k: int, state_dim: int, channels: int) -> int:
    """Flops to fold k active experts into (U~, C~) for one step."""
    return k * (2 * state_dim * channels + state_dim * channels) + k * state_dim * channels


def c_route(num_experts: int, channels: int) -> int:
    """Flops for logits plus stable softmax for one step."""
    return 2 * num_experts * channels + 3 * num_experts


def c_mix_out(k: int, state_dim: int, channels: int) -> int:
    """Separated design: k per-expert readouts plus output accumulation."""
    return k * (2 * state_dim * channels + 2 * channels)


def flop_model(
    design: str,
    seq_len: int,
    state_dim: int,
    channels: int,
    num_experts: int,
    k: int,
    kind: str = "dense",
) -> FlopCounts:
    """Modeled flops of one forward pass, broken into the three terms."""
    if design not in DESIGNS:
        raise InvalidInputError(f"design must be one of {DESIGNS}, got {design!r}")
    if kind not in TRANSITION_KINDS:
        raise InvalidInputError(f"kind must be one of {TRANSITION_KINDS}, got {kind!r}")
    if not (isinstance(seq_len, int) and seq_len >= 0):
        raise InvalidInputError(f"seq_len must be a nonnegative int, got {seq_len!r}")
    for name, v in (
        ("state_dim", state_dim), ("channels", channels),
        ("num_experts", num_experts), ("k", k),
    ):
        if not (isinstance(v, int) and v >= 1):
            raise InvalidInputError(f"{name} must be a positive int, got {v!r}")
    if k > num_experts:
        raise InvalidInputError(f"k={k} exceeds num_experts={num_experts}")
    step = c_step(kind, state_dim, channels)
    route = c_route(num_experts, channels)
    if design == "mixed":
        return FlopCounts(
            recurrence=seq_len * step,
            mixing=seq_len * c_mix(k, state_dim, channels),
            routing=seq_len * route,
        )
    return FlopCounts(
        recurrence=seq_len * num_experts * step,
        mixing=seq_len * c_mix_out(k, state_dim, channels),
        routing=seq_len * route,
    )
