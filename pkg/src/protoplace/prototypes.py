"""Episodic training of the semantic-to-visual prototype mapping.

Each step samples an episode of seen classes, hallucinates placeholder
classes from it (mode permitting), and takes one optimizer step on a cosine
cross-entropy over projected prototypes.  Unseen classes and test indices
are never touched during training.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import AttributeTable, Episode, SplitDataset, load_matrix, sample_episode, \
    save_matrix
from .errors import ParameterError, TrainingError, UsageError, ValidationError
from .hallucinate import HalluConfig, HallucinatedEpisode, hallucinate
from .linalg import MappingNet, OptimizerState, cosine_cross_entropy, net_backward, \
    net_forward, optimizer_step
from .rng import RngStream

TRAIN_MODES = ("s2v_baseline", "ep_only", "ep_ei", "full")


@dataclass
class TrainConfig:
    epochs: int = 30
    episodes_per_epoch: int | None = None  # default: ceil(|train| / (M*N))
    m_classes: int = 20
    n_samples: int = 4
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    logit_scale: float = 5.0
    lambda_real: float = 0.25
    hallucination: HalluConfig = field(default_factory=HalluConfig)
    mode: str = "full"
    hidden_dim: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ParameterError("epochs must be nonnegative")
        if self.m_classes < 1 or self.n_samples < 1:
            raise ParameterError("episode sizes must be positive")
        if self.learning_rate <= 0 or self.logit_scale <= 0:
            raise ParameterError("learning_rate and logit_scale must be positive")
        if self.lambda_real < 0:
            raise ParameterError("lambda_real must be nonnegative")
        if self.mode not in TRAIN_MODES:
            raise ParameterError(f"unknown training mode {self.mode!r}")


@dataclass
class PrototypeModel:
    net: MappingNet
    config: TrainConfig
    loss_trace: list[float] = field(default_factory=list)


def _proto_loss(
    net: MappingNet, semantic: np.ndarray, visual: np.ndarray,
    local_labels: np.ndarray, logit_scale: float
) -> tuple[float, dict[str, np.ndarray]]:
    prototypes, cache = net_forward(net, semantic)
    loss, _, g_proto = cosine_cross_entropy(visual, prototypes, local_labels,
                                            logit_scale)
    grads, _ = net_backward(net, cache, g_proto)
    return loss, grads


def place_loss(
    model: PrototypeModel, hep: HallucinatedEpisode, logit_scale: float
) -> tuple[float, dict[str, np.ndarray]]:
    """Classification of hallucinated samples against hallucinated prototypes."""
    m = hep.semantic.shape[0]
    n = hep.visual.shape[0] // m
    local = np.repeat(np.arange(m, dtype=np.int64), n)
    return _proto_loss(model.net, hep.semantic, hep.visual, local, logit_scale)


def real_loss(
    model: PrototypeModel, ep: Episode, logit_scale: float
) -> tuple[float, dict[str, np.ndarray]]:
    """Classification of the episode's real samples against real prototypes."""
    return _proto_loss(model.net, ep.semantic, ep.visual, ep.local_labels,
                       logit_scale)


def train_prototypes(ds: SplitDataset, cfg: TrainConfig) -> PrototypeModel:
    if cfg.mode == "full" and not ds.refined:
        raise UsageError("mode 'full' expects a dataset refined by stage one")
    rng = RngStream(cfg.seed)
    net = MappingNet.init(ds.attr_dim, ds.feat_dim, cfg.hidden_dim,
                          rng.derive("init"))
    model = PrototypeModel(net=net, config=cfg)
    if cfg.epochs == 0:
        return model

    rng_ep = rng.derive("episodes")
    rng_hal = rng.derive("hallucination")
    m, n = cfg.m_classes, cfg.n_samples
    per_epoch = cfg.episodes_per_epoch
    if per_epoch is None:
        per_epoch = max(1, int(np.ceil(ds.train_idx.size / (m * n))))
    opt = OptimizerState(mode=cfg.optimizer, learning_rate=cfg.learning_rate)

    for epoch in range(cfg.epochs):
        epoch_losses = []
        for _ in range(per_epoch):
            ep = sample_episode(ds, m, n, rng_ep)
            if cfg.mode == "s2v_baseline":
                total, grads = real_loss(model, ep, cfg.logit_scale)
            else:
                force = 0.0 if cfg.mode == "ep_only" else None
                hep = hallucinate(ep, cfg.hallucination, rng_hal, force_beta=force)
                p_loss, p_grads = place_loss(model, hep, cfg.logit_scale)
                total, grads = p_loss, p_grads
                if cfg.lambda_real > 0:
                    r_loss, r_grads = real_loss(model, ep, cfg.logit_scale)
                    total = total + cfg.lambda_real * r_loss
                    grads = {k: p_grads[k] + cfg.lambda_real * r_grads[k]
                             for k in p_grads}
            if not np.isfinite(total):
                raise TrainingError(f"prototype loss diverged at epoch {epoch}")
            optimizer_step(opt, net.params(), grads)
            epoch_losses.append(total)
        model.loss_trace.append(float(np.mean(epoch_losses)))
    return model


def project_prototypes(
    model: PrototypeModel, attributes: AttributeTable, class_ids
) -> np.ndarray:
    """Visual-space prototype for each requested class id (row-aligned)."""
    ids = np.asarray(class_ids, dtype=np.int64).ravel()
    if ids.size == 0:
        raise ParameterError("class_ids must be nonempty")
    if ids.min() < 0 or ids.max() >= attributes.num_classes:
        bad = ids[(ids < 0) | (ids >= attributes.num_classes)][0]
        raise ValidationError(f"unknown class id {bad}")
    out, _ = net_forward(model.net, attributes.rows(ids))
    return out


# ---------------------------------------------------------------------------
# persistence


def save_model(model: PrototypeModel, out_dir, meta: dict | None = None) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    net = model.net
    save_matrix(out_dir / "net_w1.bin", net.w1)
    save_matrix(out_dir / "net_b1.bin", net.b1[None, :])
    save_matrix(out_dir / "net_w2.bin", net.w2)
    save_matrix(out_dir / "net_b2.bin", net.b2[None, :])
    cfg = model.config
    manifest = {
        "activation": net.activation,
        "in_dim": net.in_dim,
        "hidden_dim": net.hidden_dim,
        "out_dim": net.out_dim,
        "mode": cfg.mode,
        "seed": cfg.seed,
        "epochs": cfg.epochs,
        "m_classes": cfg.m_classes,
        "n_samples": cfg.n_samples,
        "learning_rate": cfg.learning_rate,
        "optimizer": cfg.optimizer,
        "logit_scale": cfg.logit_scale,
        "lambda_real": cfg.lambda_real,
        "hallucination": {
            "sigma": cfg.hallucination.sigma,
            "n_neighbors": cfg.hallucination.n_neighbors,
            "alpha1": cfg.hallucination.alpha1,
            "alpha2": cfg.hallucination.alpha2,
        },
        "loss_trace": model.loss_trace,
    }
    manifest.update(meta or {})
    (out_dir / "model.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    )


def load_model(in_dir) -> tuple[PrototypeModel, dict]:
    in_dir = Path(in_dir)
    manifest = json.loads((in_dir / "model.json").read_text())
    net = MappingNet(
        w1=load_matrix(in_dir / "net_w1.bin"),
        b1=load_matrix(in_dir / "net_b1.bin").ravel(),
        w2=load_matrix(in_dir / "net_w2.bin"),
        b2=load_matrix(in_dir / "net_b2.bin").ravel(),
        activation=manifest.get("activation", "relu"),
    )
    hal = manifest.get("hallucination", {})
    cfg = TrainConfig(
        epochs=manifest.get("epochs", 0),
        m_classes=manifest.get("m_classes", 20),
        n_samples=manifest.get("n_samples", 4),
        learning_rate=manifest.get("learning_rate", 1e-3),
        optimizer=manifest.get("optimizer", "adam"),
        logit_scale=manifest.get("logit_scale", 5.0),
        lambda_real=manifest.get("lambda_real", 0.25),
        hallucination=HalluConfig(
            sigma=hal.get("sigma", 0.2),
            n_neighbors=hal.get("n_neighbors", 4),
            alpha1=hal.get("alpha1", 5.0),
            alpha2=hal.get("alpha2", 1.0),
        ),
        mode=manifest.get("mode", "full"),
        seed=manifest.get("seed", 0),
    )
    model = PrototypeModel(net=net, config=cfg,
                           loss_trace=list(manifest.get("loss_trace", [])))
    return model, manifest
