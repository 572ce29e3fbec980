"""Focal-loss training with Adam and an L2 kernel penalty."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import IO

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .metrics import UndefinedMetricError, evaluate_predictions
from .model import Model, ModelConfig

log = logging.getLogger(__name__)

PROB_CLIP = 1e-7


class TrainingError(RuntimeError):
    pass


class TrainingDivergedError(TrainingError):
    """Loss became NaN or infinite."""


@dataclass(frozen=True)
class FocalLossConfig:
    gamma: float = 2.0
    alpha: float = 0.4

    def __post_init__(self) -> None:
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")


@dataclass
class TrainConfig:
    lr: float = 0.002
    epochs: int = 200
    batch_size: int = 32
    l2: float = 1e-4
    patience: int = 20
    seed: int = 0
    focal: FocalLossConfig = field(default_factory=FocalLossConfig)

    def to_dict(self) -> dict:
        return asdict(self)


def focal_bce(p: Tensor, y, gamma: float = 2.0, alpha: float = 0.4) -> Tensor:
    """Mean binary focal cross-entropy with class weight ``alpha`` on positives."""
    y = np.asarray(y, dtype=p.dtype).reshape(p.shape)
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    p = ad.clip(p, PROB_CLIP, 1 - PROB_CLIP)
    one = np.asarray(1, dtype=p.dtype)
    pos = ad.mul(ad.mul(alpha * y, ad.pow_(ad.sub(one, p), gamma)), ad.log(p))
    neg = ad.mul(ad.mul((1 - alpha) * (1 - y), ad.pow_(p, gamma)), ad.log(ad.sub(one, p)))
    return ad.mul(ad.mean(ad.add(pos, neg)), -1.0)


def l2_penalty(model: Model, coeff: float) -> float:
    return float(coeff * sum(np.sum(model.params[n].data.astype(np.float64) ** 2) for n in model.decay))


class Adam:
    """Bias-corrected Adam; ``l2`` adds ``2 * l2 * w`` to the gradient of decayed weights."""

    def __init__(self, lr=0.002, beta1=0.9, beta2=0.999, eps=1e-8, l2=0.0, decay: set[str] | None = None):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.l2 = l2
        self.decay = set(decay or ())
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        """Update ``params`` in place."""
        self.t += 1
        bc1 = 1 - self.beta1**self.t
        bc2 = 1 - self.beta2**self.t
        for name in sorted(params):
            w = params[name]
            g = grads[name]
            if g.shape != w.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {w.shape} for {name}")
            if self.l2 and name in self.decay:
                g = g + 2 * self.l2 * w
            if name not in self.m:
                self.m[name] = np.zeros_like(w)
                self.v[name] = np.zeros_like(w)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * (g * g)
            upd = self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            w -= upd.astype(w.dtype)


def train_step(model: Model, opt: Adam, x: np.ndarray, y: np.ndarray, cfg: TrainConfig, rng) -> float:
    model.params.zero_grad()
    logits = model.forward(x, train=True, rng=rng)
    loss = focal_bce(ad.sigmoid(logits), y, cfg.focal.gamma, cfg.focal.alpha)
    value = float(loss.data)
    if not np.isfinite(value):
        raise TrainingDivergedError(f"non-finite loss {value} at optimizer step {opt.t + 1}")
    loss.backward()
    opt.step({n: t.data for n, t in model.params.items()}, model.params.grads())
    return value


def train_loop(
    data: np.ndarray,
    labels: np.ndarray,
    train_idx,
    val_idx=None,
    model_config: ModelConfig | None = None,
    cfg: TrainConfig | None = None,
    log_stream: IO[str] | None = None,
    model: Model | None = None,
) -> tuple[Model, dict]:
    """Train on ``data[train_idx]``, keep the best-validation-AUC weights.

    Returns the retained model and a run manifest (seed, config hash,
    per-epoch history, wall-clock).
    """
    cfg = cfg or TrainConfig()
    train_idx = np.asarray(train_idx, dtype=np.int64)
    val_idx = np.asarray([] if val_idx is None else val_idx, dtype=np.int64)
    if len(train_idx) == 0:
        raise TrainingError("empty training split")
    model = model or Model(model_config or ModelConfig(seed=cfg.seed))
    opt = Adam(lr=cfg.lr, l2=cfg.l2, decay=model.decay)
    rng = np.random.default_rng(cfg.seed)
    history = []
    best_score, best_model, best_epoch, stale = (-np.inf, -np.inf), model.copy(), 0, 0
    t0 = time.perf_counter()
    for epoch in range(1, cfg.epochs + 1):
        order = train_idx[rng.permutation(len(train_idx))]
        losses = []
        for i in range(0, len(order), cfg.batch_size):
            batch = order[i : i + cfg.batch_size]
            losses.append(train_step(model, opt, data[batch], labels[batch], cfg, rng) * len(batch))
        record = {
            "epoch": epoch,
            "loss": float(np.sum(losses) / len(order)),
            "l2": l2_penalty(model, cfg.l2),
        }
        # selection key: validation AUC, ties broken by lower validation loss
        score = (-np.inf, -record["loss"])
        if len(val_idx):
            probs = model.predict_proba(data[val_idx])
            val_loss = float(focal_bce(ad.Tensor(probs), labels[val_idx], cfg.focal.gamma, cfg.focal.alpha).data)
            record["val_loss"] = val_loss
            score = (-np.inf, -val_loss)
            try:
                rep = evaluate_predictions(probs, labels[val_idx])
                record.update({f"val_{k}": rep[k] for k in ("auc", "accuracy", "recall", "precision", "kappa")})
                score = (rep["auc"], -val_loss)
            except UndefinedMetricError:
                pass
        record["elapsed_s"] = time.perf_counter() - t0
        history.append(record)
        if log_stream is not None:
            log_stream.write(json.dumps(record) + "\n")
            log_stream.flush()
        log.info("epoch %d loss %.5f val %s", epoch, record["loss"], score)
        # patience counts epochs without a strictly better AUC (or loss, if no AUC)
        improved = score[0] > best_score[0] if np.isfinite(score[0]) else score > best_score
        if score > best_score:
            best_score, best_model, best_epoch = score, model.copy(), epoch
        stale = 0 if improved else stale + 1
        if cfg.patience and stale >= cfg.patience:
            break
    manifest = {
        "seed": cfg.seed,
        "config_hash": model.config.config_hash(),
        "train_config": cfg.to_dict(),
        "n_train": int(len(train_idx)),
        "n_val": int(len(val_idx)),
        "best_epoch": best_epoch,
        "best_val_auc": None if not np.isfinite(best_score[0]) else float(best_score[0]),
        "epochs_run": len(history),
        "history": history,
        "wall_clock_s": time.perf_counter() - t0,
    }
    return best_model, manifest
