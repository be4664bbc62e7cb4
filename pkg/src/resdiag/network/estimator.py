"""Callable wrapper turning trained weights into a residual-plot distance estimator."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..raster import rasterize
from ..scagnostics import compute_aux
from .model import NetworkConfig, NetworkParams, attention_map, predict, prepare_aux, prepare_images
from .serialize import load_weights, save_weights


@dataclass(frozen=True)
class DistanceEstimator:
    """``estimator(residuals, fitted) -> D-hat`` backed by a trained network."""

    params: NetworkParams
    config: NetworkConfig

    @classmethod
    def load(cls, path) -> "DistanceEstimator":
        params, config = load_weights(Path(path).read_bytes())
        return cls(params, config)

    def save(self, path) -> None:
        Path(path).write_bytes(save_weights(self.params, self.config))

    def _inputs(self, residuals, fitted):
        side = self.config.input_side
        img = rasterize(residuals, fitted, side, side)
        aux = compute_aux(residuals, fitted) if self.config.use_aux else None
        return img, aux

    def __call__(self, residuals, fitted) -> float:
        return float(self.batch([residuals], [fitted])[0])

    def batch(self, residual_list, fitted_list) -> np.ndarray:
        imgs, auxs = zip(*(self._inputs(r, f) for r, f in zip(residual_list, fitted_list)))
        x = prepare_images(imgs)
        a = prepare_aux(auxs) if self.config.use_aux else None
        return predict(self.params, self.config, x, a)

    def attention(self, residuals, fitted) -> np.ndarray:
        img, aux = self._inputs(residuals, fitted)
        return attention_map(self.params, self.config, img, aux)
