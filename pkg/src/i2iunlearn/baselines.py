"""Comparison methods and the retrain-from-scratch oracle.

All methods take the same pair of forget/retain reconstruction tasks, built once
from a :class:`~i2iunlearn.dataforge.DatasetSplit`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import gradcore as gc
from .gradcore import ContractError, ModelParams, NonFiniteError, Tensor
from .i2imodel import ArchSpec, ReconTask, TrainConfig, encode, forward_flat, init_params, train
from .rng import SplitMix64, derive_seed
from .unlearner import DivergenceError

METHODS = ("max-loss", "noisy-label", "random-encoder", "i2i-sota")


@dataclass
class BaselineConfig:
    method: str = "max-loss"
    epochs: int = 5
    eta: float = 0.5
    noise_std: float | None = None
    batch_size: int = 32
    seed: int = 0

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ContractError(f"unknown baseline {self.method!r}")
        if not self.eta > 0:
            raise ContractError("eta must be > 0")
        if self.epochs < 0:
            raise ContractError("epochs must be >= 0")

    @property
    def std(self) -> float:
        if self.noise_std is not None:
            return self.noise_std
        return 0.25 if self.method == "noisy-label" else 1.0


def retrain_oracle(
    arch: ArchSpec, retain: ReconTask, train_cfg: TrainConfig, init_seed: int
) -> ModelParams:
    """Fresh initialisation trained on the retain set only, same schedule as the original."""
    params, _ = train(init_params(arch, init_seed), retain, train_cfg)
    return params


def _interleaved(n_r: int, n_f: int, batch_size: int, rng: SplitMix64):
    """Yield ("retain"|"forget", idx) batches, spreading forget batches evenly over the epoch."""
    r = [("retain", b) for b in _split(rng.permutation(n_r), batch_size)]
    f = [("forget", b) for b in _split(rng.permutation(n_f), batch_size)]
    out = []
    total = len(r) + len(f)
    fi = ri = 0
    for k in range(total):
        # place forget batch j at round((j + 0.5) * total / len(f))
        if fi < len(f) and k >= int((fi + 0.5) * total / len(f)):
            out.append(f[fi])
            fi += 1
        elif ri < len(r):
            out.append(r[ri])
            ri += 1
        else:
            out.append(f[fi])
            fi += 1
    return out


def _split(order: np.ndarray, batch_size: int) -> list[np.ndarray]:
    return [order[i : i + batch_size] for i in range(0, len(order), batch_size)]


def _descend(params, objective, eta, where, frozen=()):
    try:
        _, grads = gc.value_and_grad(objective, params)
        return gc.step(params, grads, eta, "descent", frozen=frozen)
    except NonFiniteError as exc:
        raise DivergenceError(f"{where}: {exc}") from exc


def baseline_max_loss(theta0: ModelParams, forget: ReconTask, retain: ReconTask, cfg: BaselineConfig) -> ModelParams:
    """Plain gradient ascent on the forget set: no distance guard, no retention phase."""
    cfg.validate()
    rng = SplitMix64(derive_seed(cfg.seed, "max-loss"))
    params = theta0
    for epoch in range(cfg.epochs):
        for idx in _split(rng.permutation(len(forget)), cfg.batch_size):
            try:
                _, grads = gc.value_and_grad(lambda p: forget.loss(p, idx), params)
                params = gc.step(params, grads, cfg.eta, "ascent")
            except NonFiniteError as exc:
                raise DivergenceError(f"max-loss epoch {epoch}: {exc}") from exc
    return params


def baseline_noisy_label(theta0: ModelParams, forget: ReconTask, retain: ReconTask, cfg: BaselineConfig) -> ModelParams:
    """Descent with fresh clipped Gaussian images as targets for forget samples."""
    cfg.validate()
    rng = SplitMix64(derive_seed(cfg.seed, "noisy-label"))
    noise = SplitMix64(derive_seed(cfg.seed, "noisy-label/noise"))
    pixels = forget.images[0].size
    params = theta0
    for epoch in range(cfg.epochs):
        for kind, idx in _interleaved(len(retain), len(forget), cfg.batch_size, rng):
            if kind == "retain":
                obj = lambda p, idx=idx: retain.loss(p, idx)
            else:
                target = np.clip(noise.normal(len(idx) * pixels, 0.5, cfg.std), 0.0, 1.0)
                target = Tensor(target.reshape(len(idx), pixels))
                obj = lambda p, idx=idx, target=target: gc.mse_loss(
                    _forward_masked(p, forget, idx), target
                )
            params = _descend(params, obj, cfg.eta, f"noisy-label epoch {epoch}")
    return params


def _forward_masked(params: ModelParams, task: ReconTask, idx) -> Tensor:
    return forward_flat(params, task.masked[idx])


def _latent_noise_method(theta0, forget, retain, cfg, tag: str, frozen) -> ModelParams:
    cfg.validate()
    rng = SplitMix64(derive_seed(cfg.seed, tag))
    noise = SplitMix64(derive_seed(cfg.seed, tag + "/noise"))
    params = theta0
    for epoch in range(cfg.epochs):
        for kind, idx in _interleaved(len(retain), len(forget), cfg.batch_size, rng):
            if kind == "retain":
                obj = lambda p, idx=idx: retain.loss(p, idx)
            else:
                # noise is drawn before the tape runs so the objective stays a pure function
                draws = noise.normal(len(idx) * _latent_dim(params), 0.0, cfg.std)
                obj = lambda p, idx=idx, draws=draws: _latent_mse(p, forget, idx, draws)
            params = _descend(params, obj, cfg.eta, f"{tag} epoch {epoch}", frozen)
    return params


def _latent_dim(params: ModelParams) -> int:
    last = len(params.names_in("enc")) // 2 - 1
    return params[f"enc.{last}.weight"].shape[1]


def _latent_mse(params, forget: ReconTask, idx, draws: np.ndarray) -> Tensor:
    z = encode(params, forget.masked[idx])
    return gc.mse_loss(z, Tensor(draws.reshape(z.shape)))


def baseline_random_encoder(theta0: ModelParams, forget: ReconTask, retain: ReconTask, cfg: BaselineConfig) -> ModelParams:
    """Push forget-sample latents toward fresh Gaussian codes; train retain samples normally."""
    return _latent_noise_method(theta0, forget, retain, cfg, "random-encoder", frozen=())


def baseline_i2i_sota(theta0: ModelParams, forget: ReconTask, retain: ReconTask, cfg: BaselineConfig) -> ModelParams:
    """Latent-noise objective on the forget set with the decoder frozen throughout."""
    return _latent_noise_method(theta0, forget, retain, cfg, "i2i-sota", frozen=theta0.names_in("dec"))


BASELINES = {
    "max-loss": baseline_max_loss,
    "noisy-label": baseline_noisy_label,
    "random-encoder": baseline_random_encoder,
    "i2i-sota": baseline_i2i_sota,
}


def run_baseline(theta0: ModelParams, forget: ReconTask, retain: ReconTask, cfg: BaselineConfig) -> ModelParams:
    return BASELINES[cfg.method](theta0, forget, retain, cfg)
