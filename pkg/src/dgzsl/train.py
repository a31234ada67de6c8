"""Training loops for the three regimes, metrics persistence, and the
command-level pipelines (train / eval / export).

Reproducibility contract: every random draw flows from named child streams
of the config seed (init, shuffle, noise, dropout, unlabeled order, few-shot
sampling), so identical (config, dataset) pairs produce bit-identical
metrics files. Wall-clock timings are volatile and therefore written to a
separate sidecar file.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .config import TrainConfig, format_config, load_config
from .data import Dataset, fewshot_sample, load_dataset
from .errors import DgzslError
from .inductive import inductive_objective
from .inference import accuracy, fewshot_finetune, predict_batch
from .networks import (
    ModelParams,
    decode,
    encode,
    init_model,
    make_dropout_masks,
    model_from_named,
)
from .optim import Adam
from .serialize import load_checkpoint, save_checkpoint, save_matrix
from .transductive import sharpen, soft_assign, transductive_objective


@dataclass(frozen=True)
class MetricsRecord:
    """One logged epoch. Everything except wall_seconds is deterministic for
    a fixed config and seed; wall_seconds goes to the timing sidecar only."""

    epoch: int
    phase: str
    seed: int
    total: float
    reconstruction: float
    kl_true_class: float
    margin: float
    margin_weight: float
    accuracy: float
    wall_seconds: float
    labeled_total: float | None = None
    unlabeled_total: float | None = None
    unlabeled_recon: float | None = None
    target_kl: float | None = None

    def __post_init__(self):
        if not (0.0 <= self.accuracy <= 1.0):
            raise DgzslError(f"accuracy {self.accuracy} outside [0, 1]")

    def metrics_line(self) -> str:
        payload = {
            k: v
            for k, v in asdict(self).items()
            if v is not None and k != "wall_seconds"
        }
        return json.dumps(payload, sort_keys=True)

    def timing_line(self) -> str:
        return json.dumps(
            {"epoch": self.epoch, "phase": self.phase, "wall_seconds": self.wall_seconds},
            sort_keys=True,
        )


@dataclass
class TrainResult:
    model: ModelParams
    records: list
    eval_idx: np.ndarray  # dataset rows the logged accuracies refer to


def _batches(order: np.ndarray, size: int):
    for start in range(0, order.size, size):
        yield order[start : start + size]


def train_model(dataset: Dataset, cfg: TrainConfig) -> TrainResult:
    attrs = dataset.attributes
    seen_ids = np.sort(np.asarray(dataset.seen_classes, dtype=np.int64))
    unseen_ids = np.sort(np.asarray(dataset.unseen_classes, dtype=np.int64))
    x_train, y_train = dataset.train_features, dataset.train_labels
    if x_train.shape[0] == 0:
        raise DgzslError("train split is empty")

    seed_root = np.random.SeedSequence(cfg.seed)
    init_s, shuffle_s, noise_s, dropout_s, unlab_s, fewshot_s = seed_root.spawn(6)
    shuffle_rng = np.random.default_rng(shuffle_s)
    noise_rng = np.random.default_rng(noise_s)
    dropout_rng = np.random.default_rng(dropout_s)
    unlab_rng = np.random.default_rng(unlab_s)

    model = init_model(
        np.random.default_rng(init_s),
        dataset.feature_dim,
        dataset.attr_dim,
        cfg.latent_dim,
        tuple(cfg.hidden_dims),
        cfg.keep_prob,
    )
    opt = Adam(lr=cfg.learning_rate)
    records: list[MetricsRecord] = []
    eval_idx = np.flatnonzero(~dataset.train_mask)
    state = {"model": model, "epoch": 0, "eval_idx": eval_idx}

    def evaluate() -> float:
        idx = state["eval_idx"]
        if idx.size == 0:
            return 0.0
        return accuracy(
            dataset.features[idx], dataset.labels[idx], unseen_ids, attrs, state["model"]
        )

    def log(phase: str, wall: float, **terms):
        state["epoch"] += 1
        records.append(
            MetricsRecord(
                epoch=state["epoch"],
                phase=phase,
                seed=cfg.seed,
                accuracy=evaluate(),
                wall_seconds=wall,
                margin_weight=cfg.margin_weight,
                **terms,
            )
        )

    def masks_for(batch: int):
        m = state["model"]
        return (
            make_dropout_masks(dropout_rng, m.encoder, batch),
            make_dropout_masks(dropout_rng, m.decoder, batch),
        )

    def inductive_epochs(n: int, phase: str):
        total_rows = x_train.shape[0]
        for _ in range(n):
            t0 = time.perf_counter()
            sums = np.zeros(4)
            for rows in _batches(shuffle_rng.permutation(total_rows), cfg.batch_size):
                noise = noise_rng.normal(size=(rows.size, cfg.latent_dim))
                enc_m, dec_m = masks_for(rows.size)
                _, grads, bd = inductive_objective(
                    state["model"],
                    x_train[rows],
                    y_train[rows],
                    attrs,
                    noise=noise,
                    margin_class_ids=seen_ids,
                    margin_weight=cfg.margin_weight,
                    enc_masks=enc_m,
                    dec_masks=dec_m,
                    exclude_true_class=cfg.exclude_true_class,
                    include_recon=not cfg.no_recon,
                )
                state["model"] = opt.step(state["model"], grads)
                sums += rows.size * np.array(
                    [bd.total, bd.reconstruction, bd.kl_true_class, bd.margin]
                )
            means = sums / total_rows
            log(
                phase,
                time.perf_counter() - t0,
                total=means[0],
                reconstruction=means[1],
                kl_true_class=means[2],
                margin=means[3],
            )

    def transductive_epochs(n: int, pool_idx: np.ndarray, phase: str = "transductive"):
        pool = dataset.features[pool_idx]
        if pool.shape[0] == 0:
            raise DgzslError("transductive phase has no unlabeled rows")
        total_rows = x_train.shape[0]
        n_batches = max(1, -(-total_rows // cfg.batch_size))
        target = None
        for epoch in range(n):
            t0 = time.perf_counter()
            if epoch % cfg.refresh_every == 0:
                target = sharpen(
                    soft_assign(pool, attrs[unseen_ids], state["model"])
                ).values
            lab_sum = unlab_sum = recon_sum = klpq_sum = 0.0
            bd_sums = np.zeros(3)
            unlab_parts = np.array_split(unlab_rng.permutation(pool.shape[0]), n_batches)
            for rows, rows_u in zip(
                _batches(shuffle_rng.permutation(total_rows), cfg.batch_size), unlab_parts
            ):
                noise_l = noise_rng.normal(size=(rows.size, cfg.latent_dim))
                enc_m, dec_m = masks_for(rows.size)
                if rows_u.size == 0:
                    # degenerate split (fewer unlabeled rows than batches):
                    # keep the bookkeeping in sum units
                    _, grads, bd = inductive_objective(
                        state["model"],
                        x_train[rows],
                        y_train[rows],
                        attrs,
                        noise=noise_l,
                        margin_class_ids=seen_ids,
                        margin_weight=cfg.margin_weight,
                        enc_masks=enc_m,
                        dec_masks=dec_m,
                        exclude_true_class=cfg.exclude_true_class,
                        include_recon=not cfg.no_recon,
                    )
                    lab_sum += bd.total * rows.size
                    bd_sums += rows.size * np.array(
                        [bd.reconstruction, bd.kl_true_class, bd.margin]
                    )
                    state["model"] = opt.step(state["model"], grads)
                    continue
                noise_u = noise_rng.normal(size=(rows_u.size, cfg.latent_dim))
                enc_mu, dec_mu = masks_for(rows_u.size)
                _, grads, parts = transductive_objective(
                    state["model"],
                    x_train[rows],
                    y_train[rows],
                    pool[rows_u],
                    target[rows_u],
                    attrs,
                    margin_class_ids=seen_ids,
                    unseen_class_ids=unseen_ids,
                    noise_labeled=noise_l,
                    noise_unlabeled=noise_u,
                    margin_weight=cfg.margin_weight,
                    enc_masks_lab=enc_m,
                    dec_masks_lab=dec_m,
                    enc_masks_unlab=enc_mu,
                    dec_masks_unlab=dec_mu,
                    exclude_true_class=cfg.exclude_true_class,
                    include_recon=not cfg.no_recon,
                    recon_only_unlabeled=cfg.recon_only_unlabeled,
                )
                state["model"] = opt.step(state["model"], grads)
                lab_sum += parts.labeled_total
                unlab_sum += parts.unlabeled_total
                recon_sum += parts.unlabeled_recon
                klpq_sum += parts.target_kl
                bd = parts.labeled_breakdown
                bd_sums += rows.size * np.array(
                    [bd.reconstruction, bd.kl_true_class, bd.margin]
                )
            means = bd_sums / total_rows
            log(
                phase,
                time.perf_counter() - t0,
                total=lab_sum + unlab_sum,
                reconstruction=means[0],
                kl_true_class=means[1],
                margin=means[2],
                labeled_total=lab_sum,
                unlabeled_total=unlab_sum,
                unlabeled_recon=recon_sum,
                target_kl=klpq_sum,
            )

    def fewshot_summary(feats, labs):
        """Eval-mode objective value on the few-shot set, for the log line."""
        noise = noise_rng.normal(size=(feats.shape[0], cfg.latent_dim))
        _, _, bd = inductive_objective(
            state["model"],
            feats,
            labs,
            attrs,
            noise=noise,
            margin_class_ids=unseen_ids,
            margin_weight=cfg.margin_weight,
            exclude_true_class=cfg.exclude_true_class,
        )
        return bd

    if cfg.regime == "inductive":
        inductive_epochs(cfg.epochs, "inductive")
    elif cfg.regime == "transductive":
        inductive_epochs(cfg.pretrain_epochs, "inductive")
        transductive_epochs(cfg.epochs - cfg.pretrain_epochs, eval_idx)
    elif cfg.regime == "fewshot":
        inductive_epochs(cfg.epochs, "inductive")
        split = fewshot_sample(dataset, cfg.k, fewshot_s)
        state["eval_idx"] = split.unlabeled_idx
        if cfg.k > 0:
            t0 = time.perf_counter()
            state["model"] = fewshot_finetune(
                state["model"],
                dataset.features[split.labeled_idx],
                dataset.labels[split.labeled_idx],
                attrs,
                unseen_ids,
                epochs=cfg.fewshot_epochs,
                batch_size=cfg.fewshot_batch_size,
                learning_rate=cfg.learning_rate,
                margin_weight=cfg.margin_weight,
                include_seen_margin=cfg.include_seen_margin,
                seen_class_ids=seen_ids,
                exclude_true_class=cfg.exclude_true_class,
                use_dropout=cfg.keep_prob < 1.0,
                seed=fewshot_s.spawn(1)[0],
            )
            bd = fewshot_summary(
                dataset.features[split.labeled_idx], dataset.labels[split.labeled_idx]
            )
            log(
                "fewshot",
                time.perf_counter() - t0,
                total=bd.total,
                reconstruction=bd.reconstruction,
                kl_true_class=bd.kl_true_class,
                margin=bd.margin,
            )
        if cfg.transductive_fewshot:
            transductive_epochs(cfg.transductive_epochs, split.unlabeled_idx)
    else:  # pragma: no cover - config validation rejects other regimes
        raise DgzslError(f"unknown regime {cfg.regime!r}")

    return TrainResult(state["model"], records, state["eval_idx"])


def _dataset_from_dir(data_dir) -> Dataset:
    d = Path(data_dir)
    return load_dataset(d / "features.bin", d / "attributes.csv", d / "split.manifest")


def run_train(config_path, data_dir, out_dir, **overrides) -> dict:
    """Train per the config (plus CLI overrides) and persist the run.

    The output directory receives the effective config, metrics and timing
    line files, the checkpoint, and a JSON summary; together they reproduce
    the run exactly.
    """
    cfg = load_config(config_path).override(**overrides)
    dataset = _dataset_from_dir(data_dir)
    result = train_model(dataset, cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.cfg").write_text(format_config(cfg), encoding="utf-8")
    (out / "metrics.jsonl").write_text(
        "".join(r.metrics_line() + "\n" for r in result.records), encoding="utf-8"
    )
    (out / "timings.jsonl").write_text(
        "".join(r.timing_line() + "\n" for r in result.records), encoding="utf-8"
    )
    save_checkpoint(
        out / "model.ckpt",
        result.model.named_arrays(),
        meta={"keep_prob": cfg.keep_prob, "seed": cfg.seed},
    )
    summary = {
        "regime": cfg.regime,
        "seed": cfg.seed,
        "epochs_logged": len(result.records),
        "final_accuracy": result.records[-1].accuracy if result.records else None,
        "eval_rows": int(result.eval_idx.size),
        "checkpoint": str(out / "model.ckpt"),
    }
    (out / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return summary


def _model_from_checkpoint(checkpoint_path) -> ModelParams:
    tensors, meta = load_checkpoint(checkpoint_path)
    return model_from_named(tensors, keep_prob=meta.get("keep_prob", 1.0))


def run_eval(checkpoint_path, data_dir, candidates: str = "unseen") -> dict:
    """Top-1 accuracy and per-class confusion counts on the test split."""
    model = _model_from_checkpoint(checkpoint_path)
    dataset = _dataset_from_dir(data_dir)
    if model.feature_dim != dataset.feature_dim or model.attr_dim != dataset.attr_dim:
        raise DgzslError(
            f"checkpoint dims (D={model.feature_dim}, M={model.attr_dim}) do not "
            f"match dataset (D={dataset.feature_dim}, M={dataset.attr_dim})"
        )
    pools = {
        "unseen": dataset.unseen_classes,
        "seen": dataset.seen_classes,
        "all": tuple(range(dataset.num_classes)),
    }
    if candidates not in pools:
        raise DgzslError(f"candidate selector must be one of {sorted(pools)}")
    ids = np.sort(np.asarray(pools[candidates], dtype=np.int64))
    feats, labels = dataset.test_features, dataset.test_labels
    predicted, _, _ = predict_batch(feats, ids, dataset.attributes, model)
    confusion: dict[str, dict[str, int]] = {}
    for true, pred in zip(labels.tolist(), predicted.tolist()):
        confusion.setdefault(str(true), {}).setdefault(str(pred), 0)
        confusion[str(true)][str(pred)] += 1
    return {
        "accuracy": float(np.mean(predicted == labels)),
        "examples": int(labels.size),
        "candidates": [int(i) for i in ids],
        "confusion": confusion,
    }


def export_embeddings(checkpoint_path, data_dir, out_dir) -> dict:
    """Write latent means and reconstructions for every dataset row.

    Output rows align one-for-one with the stored feature order (train block
    then test block). Reconstructions decode the posterior mean.
    """
    model = _model_from_checkpoint(checkpoint_path)
    dataset = _dataset_from_dir(data_dir)
    q = encode(dataset.features, model.encoder)
    recons = decode(q.mean, model.decoder)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_matrix(out / "latents.bin", q.mean)
    save_matrix(out / "recons.bin", recons)
    return {"latents": str(out / "latents.bin"), "recons": str(out / "recons.bin")}
