"""Mini-batch Adam training of the encoder on adjacency targets."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .encoder import (
    EncoderConfig,
    EncoderParams,
    backward,
    batch_losses,
    check_params,
    forward,
    init_params,
)
from .graph import WeightConfig, adjacency_of
from .labelmap import LabelMap, labels_present
from .retrieval import DescriptorStore

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 16
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    shuffle_seed: int = 0
    weight_config: WeightConfig = field(default_factory=WeightConfig)

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        for b in (self.adam_beta1, self.adam_beta2):
            if not 0 <= b < 1:
                raise ValueError(f"Adam betas must lie in [0, 1), got {b}")


@dataclass
class AdamState:
    m: EncoderParams
    v: EncoderParams
    t: int = 0

    @classmethod
    def fresh(cls, params: EncoderParams) -> "AdamState":
        return cls(params.zeros_like(), params.zeros_like(), 0)


@dataclass
class TrainReport:
    epoch_losses: list[float]
    params: EncoderParams
    seconds: float
    steps: int = 0


class NonFiniteError(FloatingPointError):
    pass


def adam_step(
    params: EncoderParams, grads: EncoderParams, state: AdamState, cfg: TrainConfig
) -> tuple[EncoderParams, AdamState]:
    """One bias-corrected Adam update; inputs are left untouched."""
    for name, g in grads.named_arrays():
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient in {name}")
    b1, b2, eps = cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon
    t = state.t + 1
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params.arrays(), grads.arrays(), state.m.arrays(), state.v.arrays()):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        new_p.append(p - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + eps))
        new_m.append(m)
        new_v.append(v)
    return (
        EncoderParams.from_arrays(new_p),
        AdamState(EncoderParams.from_arrays(new_m), EncoderParams.from_arrays(new_v), t),
    )


def prepare_targets(maps: Sequence[LabelMap], wcfg: WeightConfig) -> np.ndarray:
    return np.stack([adjacency_of(m, wcfg).reshape(-1) for m in maps])


def _check_dataset(dataset, ecfg: EncoderConfig) -> tuple[np.ndarray, list[LabelMap]]:
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    images = np.stack([np.asarray(img, dtype=np.float64) for img, _ in dataset])
    maps = [m for _, m in dataset]
    want = (ecfg.input_channels, *ecfg.input_size)
    if images.shape[1:] != want:
        raise ValueError(f"images have shape {images.shape[1:]}, encoder expects {want}")
    for m in maps:
        if m.num_classes != ecfg.num_classes:
            raise ValueError(
                f"label map has C={m.num_classes}, encoder expects {ecfg.num_classes}"
            )
    return images, maps


def epoch_order(n: int, shuffle_seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([shuffle_seed, epoch]).permutation(n)


def train(
    dataset: Sequence[tuple[np.ndarray, LabelMap]],
    encoder_cfg: EncoderConfig,
    train_cfg: TrainConfig = TrainConfig(),
    params: Optional[EncoderParams] = None,
) -> TrainReport:
    """Minimise the summed per-image adjacency loss with Adam.

    Each batch contributes the sum (not mean) of its per-image losses and
    triggers one optimizer step. Recorded epoch losses are the mean per-image
    loss seen during that epoch's forward passes.
    """
    t0 = time.perf_counter()
    images, maps = _check_dataset(dataset, encoder_cfg)
    targets = prepare_targets(maps, train_cfg.weight_config)
    if params is None:
        params = init_params(encoder_cfg)
    check_params(params, encoder_cfg)
    state = AdamState.fresh(params)
    n = len(images)
    history = []
    for epoch in range(train_cfg.epochs):
        order = epoch_order(n, train_cfg.shuffle_seed, epoch)
        total = 0.0
        for start in range(0, n, train_cfg.batch_size):
            # ascending dataset index within a batch fixes the accumulation order
            idx = np.sort(order[start : start + train_cfg.batch_size])
            fr = forward(params, encoder_cfg, images[idx])
            loss, grads = backward(params, encoder_cfg, fr, targets[idx])
            if not np.isfinite(loss):
                raise NonFiniteError(f"non-finite loss at epoch {epoch + 1}")
            total += loss
            params, state = adam_step(params, grads, state, train_cfg)
        history.append(total / n)
        log.info("epoch %d/%d mean_loss %.6g", epoch + 1, train_cfg.epochs, history[-1])
    return TrainReport(history, params, time.perf_counter() - t0, state.t)


def evaluate_loss(
    params: EncoderParams, cfg: EncoderConfig, dataset, wcfg: WeightConfig = WeightConfig()
) -> float:
    """Mean per-image loss of fixed parameters over a dataset."""
    images, maps = _check_dataset(dataset, cfg)
    targets = prepare_targets(maps, wcfg)
    return float(batch_losses(forward(params, cfg, images), targets).mean())


def extract_descriptors(
    params: EncoderParams,
    cfg: EncoderConfig,
    archive: Sequence[tuple[str, np.ndarray]],
    labels: Optional[dict[str, np.ndarray]] = None,
) -> DescriptorStore:
    """Descriptor of every archive image, one image per forward pass.

    Images go through the network one at a time so a descriptor never depends
    on which other images share its batch.
    """
    store = DescriptorStore(cfg.gamma, cfg.num_classes)
    for image_id, image in archive:
        desc = forward(params, cfg, image).descriptor
        y = labels[image_id] if labels is not None else np.zeros(cfg.num_classes, np.int64)
        store.add(image_id, desc, y)
    return store


def labels_for(maps: dict[str, LabelMap]) -> dict[str, np.ndarray]:
    return {k: labels_present(m) for k, m in maps.items()}
