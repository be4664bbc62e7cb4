"""Mini-batch training with early stopping on validation RMSE."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .model import NetworkConfig, NetworkParams, init_params, loss_and_gradients, predict, prepare_aux, prepare_images
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)

MIN_EXAMPLES = 50
VALIDATION_FRACTION = 0.2


@dataclass
class TrainHistory:
    train_rmse: list[float] = field(default_factory=list)
    val_rmse: list[float] = field(default_factory=list)
    best_epoch: int = -1
    stop_reason: str = ""
    train_index: np.ndarray | None = None
    val_index: np.ndarray | None = None

    @property
    def best_val_rmse(self) -> float:
        return self.val_rmse[self.best_epoch]

    def rows(self):
        for i, (t, v) in enumerate(zip(self.train_rmse, self.val_rmse)):
            yield i + 1, t, v


def split_indices(count: int, split_seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded shuffle, first 80% train and the rest validation."""
    perm = np.random.default_rng(split_seed).permutation(count)
    n_val = max(1, int(round(VALIDATION_FRACTION * count)))
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def dataset_arrays(dataset, config: NetworkConfig, dtype=np.float32):
    x = prepare_images([ex.image for ex in dataset]).astype(dtype)
    aux = prepare_aux([ex.aux for ex in dataset]).astype(dtype) if config.use_aux else None
    y = np.array([ex.target for ex in dataset], dtype=float)
    return x, aux, y


def _rmse(pred, target) -> float:
    return float(np.sqrt(np.mean((pred - target) ** 2)))


def train(
    dataset,
    config: NetworkConfig,
    split_seed: int,
    rng: np.random.Generator,
    patience: int = 50,
    max_epochs: int = 2000,
    max_seconds: float | None = None,
    params: NetworkParams | None = None,
) -> tuple[NetworkParams, TrainHistory]:
    """Fit the estimator to labelled examples; returns the best-epoch weights.

    The split is a function of ``split_seed`` alone. Initialisation, batch
    order and dropout masks all come from ``rng``.  ``max_seconds`` adds a
    wall-clock cap checked between epochs.
    """
    if len(dataset) < MIN_EXAMPLES:
        raise ValueError(f"need at least {MIN_EXAMPLES} examples, got {len(dataset)}")
    if patience < 0 or max_epochs < 1:
        raise ValueError("patience must be >= 0 and max_epochs >= 1")
    x, aux, y = dataset_arrays(dataset, config)
    tr, va = split_indices(len(dataset), split_seed)
    if params is None:
        params = init_params(config, rng)
    else:
        params = params.copy()
    opt = AdamState()
    hist = TrainHistory(train_index=tr, val_index=va)
    best = params.copy()
    best_val = np.inf
    wait = 0
    start = time.monotonic()
    bs = config.batch_size

    for epoch in range(max_epochs):
        order = tr[rng.permutation(tr.size)]
        sq, seen = 0.0, 0
        for i in range(0, order.size, bs):
            idx = order[i : i + bs]
            loss, grads = loss_and_gradients(
                params, config, x[idx], None if aux is None else aux[idx], y[idx],
                training=True, rng=rng, update_stats=True,
            )
            adam_step(params.weights, grads, opt, config.learning_rate)
            sq += loss * idx.size
            seen += idx.size
        hist.train_rmse.append(float(np.sqrt(sq / seen)))
        val = _rmse(predict(params, config, x[va], None if aux is None else aux[va]), y[va])
        hist.val_rmse.append(val)
        log.info("epoch %d train %.4f val %.4f", epoch + 1, hist.train_rmse[-1], val)
        if val < best_val:
            best_val, best, wait = val, params.copy(), 0
            hist.best_epoch = epoch
        else:
            wait += 1
            if wait >= patience:
                hist.stop_reason = "patience"
                break
        if max_seconds is not None and time.monotonic() - start > max_seconds:
            hist.stop_reason = "time"
            break
    else:
        hist.stop_reason = "max_epochs"
    return best, hist
