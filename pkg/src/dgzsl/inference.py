"""Prediction for unseen-class inputs, and few-shot fine-tuning.

The label rule picks the candidate class whose latent prior is closest (in
KL) to the input's posterior. Scoring via the per-class variational bound
with a shared latent sample gives the same label, because the reconstruction
term does not depend on the candidate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DgzslError
from .gaussian import DiagGaussian, gauss_loglik, kl_matrix, sample_reparam
from .inductive import inductive_objective
from .networks import ModelParams, class_prior, decode, encode, make_dropout_masks
from .optim import Adam


@dataclass(frozen=True)
class Prediction:
    """Label plus the evidence behind it: per-candidate KLs and the posterior.

    ``kl_scores`` aligns with ``candidate_ids`` (ascending); the label is the
    argmin with ties broken toward the lowest class id.
    """

    label: int
    candidate_ids: tuple[int, ...]
    kl_scores: np.ndarray
    posterior: DiagGaussian

    def __post_init__(self):
        scores = np.asarray(self.kl_scores, dtype=np.float64)
        if scores.shape != (len(self.candidate_ids),):
            raise DgzslError("kl_scores must align with candidate_ids")
        if scores.size and scores.min() < -1e-9:
            raise DgzslError(f"negative KL score: {scores.min()}")
        if self.label != self.candidate_ids[int(np.argmin(scores))]:
            raise DgzslError("label is not the argmin of kl_scores")


def _sorted_candidates(candidate_ids, num_classes: int) -> np.ndarray:
    ids = np.unique(np.asarray(candidate_ids, dtype=np.int64))
    if ids.size == 0:
        raise DgzslError("candidate class set is empty")
    if ids.min() < 0 or ids.max() >= num_classes:
        raise DgzslError(
            f"candidate ids {ids.min()}..{ids.max()} outside 0..{num_classes - 1}"
        )
    return ids


def predict_batch(features, candidate_ids, attr_rows, model: ModelParams):
    """Labels for a feature batch, plus the KL score matrix and posteriors.

    Returns (labels N, kl matrix N×K aligned with the ascending candidate
    ids, posterior DiagGaussian batch). Eval mode, deterministic.
    """
    ids = _sorted_candidates(candidate_ids, np.asarray(attr_rows).shape[0])
    q = encode(np.atleast_2d(np.asarray(features, dtype=np.float64)), model.encoder)
    scores = kl_matrix(q, class_prior(np.asarray(attr_rows)[ids], model.prior))
    labels = ids[np.argmin(scores, axis=1)]  # first occurrence = lowest class id
    return labels, scores, q


def predict_zsl(x, candidate_ids, attr_rows, model: ModelParams) -> Prediction:
    """Closest-prior rule for one input: argmin over candidate KLs."""
    labels, scores, q = predict_batch(x, candidate_ids, attr_rows, model)
    ids = _sorted_candidates(candidate_ids, np.asarray(attr_rows).shape[0])
    return Prediction(
        label=int(labels[0]),
        candidate_ids=tuple(int(i) for i in ids),
        kl_scores=scores[0],
        posterior=DiagGaussian(q.mean[0], q.logvar[0]),
    )


def predict_via_bound(x, candidate_ids, attr_rows, model: ModelParams, noise) -> int:
    """Label by maximizing the per-candidate variational bound.

    One latent sample (from ``noise``) is shared across every candidate, so
    the reconstruction term is class-independent and the argmax must agree
    with predict_zsl.
    """
    ids = _sorted_candidates(candidate_ids, np.asarray(attr_rows).shape[0])
    x = np.asarray(x, dtype=np.float64)
    q = encode(np.atleast_2d(x), model.encoder)
    z = sample_reparam(q, np.atleast_2d(np.asarray(noise, dtype=np.float64)))
    recon = gauss_loglik(x.ravel(), decode(z, model.decoder).ravel())
    kls = kl_matrix(q, class_prior(np.asarray(attr_rows)[ids], model.prior))[0]
    bounds = recon - kls
    return int(ids[np.argmax(bounds)])


def accuracy(features, labels, candidate_ids, attr_rows, model: ModelParams) -> float:
    predicted, _, _ = predict_batch(features, candidate_ids, attr_rows, model)
    return float(np.mean(predicted == np.asarray(labels)))


def fewshot_finetune(
    model: ModelParams,
    features,
    labels,
    attr_rows,
    unseen_class_ids,
    *,
    epochs: int = 50,
    batch_size: int = 32,
    learning_rate: float = 1e-3,
    margin_weight: float = 1.0,
    include_seen_margin: bool = False,
    seen_class_ids=(),
    exclude_true_class: bool = False,
    use_dropout: bool = True,
    seed: int = 0,
) -> ModelParams:
    """Continue supervised training on k labeled unseen-class examples.

    The margin term runs over the unseen classes (optionally also the seen
    ones). An empty example set returns the model unchanged. The input model
    is never mutated.
    """
    feats = np.asarray(features, dtype=np.float64)
    if feats.size == 0:
        return model.copy()
    labs = np.asarray(labels, dtype=np.int64)
    unseen = np.unique(np.asarray(unseen_class_ids, dtype=np.int64))
    outside = set(labs.tolist()) - set(unseen.tolist())
    if outside:
        raise DgzslError(f"few-shot labels outside the unseen classes: {sorted(outside)}")
    margin_ids = unseen
    if include_seen_margin:
        margin_ids = np.unique(np.concatenate([unseen, np.asarray(seen_class_ids, dtype=np.int64)]))

    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    shuffle_rng, noise_rng, dropout_rng = (np.random.default_rng(s) for s in root.spawn(3))
    opt = Adam(lr=learning_rate)
    latent = model.latent_dim
    current = model
    n = feats.shape[0]
    for _ in range(epochs):
        order = shuffle_rng.permutation(n)
        for start in range(0, n, batch_size):
            rows = order[start : start + batch_size]
            noise = noise_rng.normal(size=(rows.size, latent))
            enc_masks = dec_masks = None
            if use_dropout:
                enc_masks = make_dropout_masks(dropout_rng, current.encoder, rows.size)
                dec_masks = make_dropout_masks(dropout_rng, current.decoder, rows.size)
            _, grads, _ = inductive_objective(
                current,
                feats[rows],
                labs[rows],
                attr_rows,
                noise=noise,
                margin_class_ids=margin_ids,
                margin_weight=margin_weight,
                enc_masks=enc_masks,
                dec_masks=dec_masks,
                exclude_true_class=exclude_true_class,
            )
            current = opt.step(current, grads)
    return current
