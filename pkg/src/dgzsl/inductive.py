"""Supervised training objective: class-prior ELBO plus a margin term.

Per labeled example the objective is

    reconstruction − KL(posterior ‖ true-class prior) + weight · margin

where the margin term is the negated log-sum-exp of negated KLs against the
allowed class set. Maximizing it pulls the posterior toward the true class
prior while pushing it away from the nearest competing prior. The batch value
is the arithmetic mean.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .autodiff import Array, Tape
from .errors import DgzslError, ShapeError
from .gaussian import DiagGaussian, gauss_loglik, gauss_loglik_rows, kl_diag, kl_matrix, sample_reparam
from .networks import ModelParams, PriorParams, class_prior, decode, encode


@dataclass(frozen=True)
class ObjectiveBreakdown:
    """Batch-mean value of each objective term, stored so each is testable.

    Identity: total == reconstruction − kl_true_class + margin_weight · margin.
    """

    reconstruction: float
    kl_true_class: float
    margin: float
    margin_weight: float
    total: float


def one_hot(labels, num_classes: int) -> Array:
    lab = np.asarray(labels)
    if lab.ndim != 1:
        raise ShapeError(f"labels must be 1-D, got shape {lab.shape}")
    if lab.size and (lab.min() < 0 or lab.max() >= num_classes):
        raise DgzslError(
            f"label out of range: saw {int(lab.min())}..{int(lab.max())} "
            f"with {num_classes} classes"
        )
    out = np.zeros((lab.size, num_classes))
    out[np.arange(lab.size), lab] = 1.0
    return out


def class_conditional_elbo(x, attr, model: ModelParams, noise):
    """Single-example lower bound against one class prior (eval mode).

    Returns (value, ObjectiveBreakdown) with the margin fields zeroed; value =
    one-sample reconstruction log-likelihood minus the KL to the class prior.
    """
    q = encode(x, model.encoder)
    z = sample_reparam(q, noise)
    recon = gauss_loglik(x, decode(z, model.decoder))
    kl = kl_diag(q, class_prior(attr, model.prior))
    value = recon - kl
    return value, ObjectiveBreakdown(recon, kl, 0.0, 0.0, value)


def margin_term(q: DiagGaussian, attr_rows, prior: PriorParams) -> float:
    """−logsumexp over the given classes of −KL(q ‖ class prior).

    The result lies between min KL − ln(#classes) and min KL, acting as a
    smooth stand-in for the distance to the nearest class prior.
    """
    rows = np.asarray(attr_rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[0] == 0:
        raise DgzslError("margin_term needs a non-empty 2-D attribute-row matrix")
    q2 = DiagGaussian(np.atleast_2d(ad._value(q.mean)), np.atleast_2d(ad._value(q.logvar)))
    kl_row = kl_matrix(q2, class_prior(rows, prior))[0]
    return -ad.logsumexp(-kl_row)


class ObjectiveColumns(NamedTuple):
    """Per-example (B×1) terms; tape variables when the model is bound."""

    reconstruction: object
    kl_true_class: object
    margin: object


def inductive_terms(
    model: ModelParams,
    features,
    labels,
    attr_rows,
    *,
    noise,
    margin_class_ids,
    enc_masks=None,
    dec_masks=None,
    exclude_true_class: bool = False,
) -> ObjectiveColumns:
    """Per-example objective columns for a labeled batch.

    ``attr_rows`` is the full (num_classes × M) attribute matrix indexed by
    class id; ``margin_class_ids`` selects which classes the margin term sums
    over, and every label must belong to that set.
    """
    num_classes = np.asarray(attr_rows).shape[0]
    hot = one_hot(labels, num_classes)
    margin_ids = np.asarray(margin_class_ids)
    if margin_ids.size == 0:
        raise DgzslError("margin class set is empty")
    allowed = np.zeros(num_classes, dtype=bool)
    allowed[margin_ids] = True
    bad = ~allowed[np.asarray(labels)]
    if bad.any():
        raise DgzslError(
            f"labels outside the training class set: {sorted(np.unique(np.asarray(labels)[bad]).tolist())}"
        )
    mask = np.broadcast_to(allowed, hot.shape)
    if exclude_true_class:
        mask = mask & (hot == 0.0)

    q = encode(features, model.encoder, enc_masks)
    z = sample_reparam(q, noise)
    recon = gauss_loglik_rows(decode(z, model.decoder, dec_masks), features)
    kl_all = kl_matrix(q, class_prior(attr_rows, model.prior))  # B × num_classes
    kl_true = ad.sum(kl_all * hot, axis=1, keepdims=True)
    margin = -1.0 * ad.logsumexp_rows(-1.0 * kl_all, mask=mask)
    return ObjectiveColumns(recon, kl_true, margin)


def assemble(cols: ObjectiveColumns, margin_weight: float, *, include_recon: bool = True):
    """Mean objective over the batch from per-example columns."""
    per_example = margin_weight * cols.margin - cols.kl_true_class
    if include_recon:
        per_example = per_example + cols.reconstruction
    return ad.mean(per_example)


def breakdown_of(cols: ObjectiveColumns, margin_weight: float, *, include_recon: bool = True) -> ObjectiveBreakdown:
    recon = float(np.mean(ad._value(cols.reconstruction))) if include_recon else 0.0
    kl = float(np.mean(ad._value(cols.kl_true_class)))
    margin = float(np.mean(ad._value(cols.margin)))
    return ObjectiveBreakdown(recon, kl, margin, margin_weight, recon - kl + margin_weight * margin)


def inductive_objective(
    model: ModelParams,
    features,
    labels,
    attr_rows,
    *,
    noise,
    margin_class_ids,
    margin_weight: float = 1.0,
    enc_masks=None,
    dec_masks=None,
    exclude_true_class: bool = False,
    include_recon: bool = True,
):
    """Batch-mean objective with gradients for every model tensor.

    Returns (value, gradient dict keyed like ModelParams.named_arrays,
    ObjectiveBreakdown). The trainer ascends these gradients.
    """
    if margin_weight < 0:
        raise DgzslError(f"margin weight must be ≥ 0, got {margin_weight}")
    tape = Tape()
    bound = model.bind(tape)
    cols = inductive_terms(
        bound,
        features,
        labels,
        attr_rows,
        noise=noise,
        margin_class_ids=margin_class_ids,
        enc_masks=enc_masks,
        dec_masks=dec_masks,
        exclude_true_class=exclude_true_class,
    )
    total = assemble(cols, margin_weight, include_recon=include_recon)
    grads = ad.backward_grad(tape, total)
    return float(total), grads, breakdown_of(cols, margin_weight, include_recon=include_recon)
