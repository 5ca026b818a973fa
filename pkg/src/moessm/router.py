"""Token router: linear logits, stable softmax, top-k masking.

Top-k keeps the softmax values of the retained experts and zeroes the rest;
it never renormalizes, so the retained mass is a true lower bound on 1 and
dropping experts can only shrink the mixture. Ties on logit value retain the
lower expert index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .types import RoutingPlan, SequenceBatch, as_float_array


@dataclass(frozen=True)
class RouterParams:
    """Logit map: g_t = Wg x_t + bias, Wg (E, P), bias (E,)."""

    wg: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        wg = as_float_array("wg", self.wg, 2)
        bias = as_float_array("bias", self.bias, 1)
        if bias.shape[0] != wg.shape[0]:
            raise InvalidInputError(
                f"bias has {bias.shape[0]} entries, wg has {wg.shape[0]} experts"
            )
        object.__setattr__(self, "wg", wg)
        object.__setattr__(self, "bias", bias)

    @property
    def num_experts(self) -> int:
        return self.wg.shape[0]

    @property
    def channels(self) -> int:
        return self.wg.shape[1]


def router_logits(params: RouterParams, batch: SequenceBatch) -> np.ndarray:
    """(T, E) logits for every token."""
    if batch.channels != params.channels:
        raise InvalidInputError(
            f"batch has {batch.channels} channels, router expects {params.channels}"
        )
    return batch.x @ params.wg.T + params.bias


def softmax_weights(logits: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax (max-shifted); rows sum to 1 up to rounding."""
    logits = as_float_array("logits", logits, 2)
    z = logits - logits.max(axis=1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=1, keepdims=True)
    return z


def softmax_route(logits: np.ndarray) -> RoutingPlan:
    """Dense routing plan: every expert active with its softmax weight."""
    return RoutingPlan.dense(softmax_weights(logits))


def topk_mask(weights, k: int) -> RoutingPlan:
    """Keep the k largest weights per row (ties -> lowest index), zero the rest.

    ``weights`` is a dense (T, E) array or a dense RoutingPlan. Retained
    weights keep their values: no renormalization. k = E returns the dense
    plan unchanged in value.
    """
    if isinstance(weights, RoutingPlan):
        weights = weights.pi
    pi = as_float_array("weights", weights, 2)
    e = pi.shape[1]
    if not (1 <= k <= e):
        raise InvalidInputError(f"k must be in [1, E={e}], got {k}")
    if np.any(pi < 0):
        raise InvalidInputError("router weights must be nonnegative")
    # Stable sort on -pi: equal weights keep ascending index order, so the
    # first k columns are the winners with lowest-index tie-breaking.
    order = np.argsort(-pi, axis=1, kind="stable")
    active = np.zeros(pi.shape, dtype=bool)
    np.put_along_axis(active, order[:, :k], True, axis=1)
    masked = np.where(active, pi, 0.0)
    return RoutingPlan(pi=masked, active=active, k=k)
