"""
Domain losses over per-instance source probabilities p.

The discrimination loss is the usual negative log-likelihood of the domain
labels. The confusion loss is its exact negation: minimising it pushes the
encoder towards representations the discriminator cannot separate.
"""
from __future__ import annotations

from collections.abc import Sequence

from damp.numerics import ops
from damp.numerics.tensor import Tensor, constant

_ONE = constant(1.0)


def _log_likelihood(probs: Sequence[Tensor], is_source: Sequence[bool]) -> Tensor:
    if len(probs) != len(is_source):
        raise ValueError("one domain flag per probability is required")
    if not probs:
        raise ValueError("empty batch")
    terms = [ops.log(p) if src else ops.log(ops.sub(_ONE, p)) for p, src in zip(probs, is_source)]
    total = terms[0]
    for term in terms[1:]:
        total = ops.add(total, term)
    return total


def domain_confusion_loss(probs: Sequence[Tensor], is_source: Sequence[bool]) -> Tensor:
    """(1/N) (sum_source log p + sum_target log(1 - p)); its maximum is 0."""
    return ops.scale(_log_likelihood(probs, is_source), 1.0 / len(probs))


def domain_discrimination_loss(probs: Sequence[Tensor], is_source: Sequence[bool]) -> Tensor:
    """-(1/N) (sum_source log p + sum_target log(1 - p))."""
    return ops.scale(_log_likelihood(probs, is_source), -1.0 / len(probs))


def sequence_cross_entropy(dists: Sequence[Tensor], targets: Sequence[int]) -> Tensor:
    """Summed -log p(target) over decode steps."""
    if len(dists) != len(targets) or not dists:
        raise ValueError("one distribution per target token is required")
    total = ops.cross_entropy(dists[0], targets[0])
    for dist, target in zip(dists[1:], targets[1:]):
        total = ops.add(total, ops.cross_entropy(dist, target))
    return total
