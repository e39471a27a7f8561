"""Fully-connected image-to-image autoencoder with a centre masking operator."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import gradcore as gc
from .gradcore import ContractError, ModelParams, Tensor
from .rng import SplitMix64

IMAGE_SIZE = 16


@dataclass(frozen=True)
class MaskSpec:
    mode: str = "inpaint-center"
    k: int = 8

    def validate(self, height: int = IMAGE_SIZE, width: int = IMAGE_SIZE) -> None:
        if self.mode not in ("inpaint-center", "outpaint-border"):
            raise ContractError(f"mask mode must be inpaint-center or outpaint-border, got {self.mode!r}")
        if not 0 <= self.k <= min(height, width):
            raise ContractError(f"mask size k={self.k} outside [0, {min(height, width)}]")


@dataclass(frozen=True)
class ArchSpec:
    input_dim: int = IMAGE_SIZE * IMAGE_SIZE
    encoder_widths: tuple[int, ...] = (256, 64, 16)
    decoder_widths: tuple[int, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "encoder_widths", tuple(self.encoder_widths))
        if self.decoder_widths is None:
            # mirror: 16 -> 64 -> 256 -> input_dim
            mirror = tuple(reversed(self.encoder_widths[:-1])) + (self.input_dim,)
            object.__setattr__(self, "decoder_widths", mirror)
        else:
            object.__setattr__(self, "decoder_widths", tuple(self.decoder_widths))
        if not self.encoder_widths or not self.decoder_widths:
            raise ContractError("encoder and decoder need at least one layer each")
        if self.decoder_widths[-1] != self.input_dim:
            raise ContractError("decoder output width must equal input_dim")

    @property
    def latent_dim(self) -> int:
        return self.encoder_widths[-1]

    def layers(self) -> list[tuple[str, int, int]]:
        out = []
        fan_in = self.input_dim
        for i, w in enumerate(self.encoder_widths):
            out.append((f"enc.{i}", fan_in, w))
            fan_in = w
        for i, w in enumerate(self.decoder_widths):
            out.append((f"dec.{i}", fan_in, w))
            fan_in = w
        return out


def dense_init(layers: Sequence[tuple[str, int, int]], seed: int) -> ModelParams:
    rng = SplitMix64(seed)
    entries = {}
    for name, fan_in, fan_out in layers:
        s = math.sqrt(6.0 / (fan_in + fan_out))
        entries[f"{name}.weight"] = rng.uniform(fan_in * fan_out, -s, s).reshape(fan_in, fan_out)
        entries[f"{name}.bias"] = np.zeros(fan_out)
    return ModelParams.from_arrays(entries)


def init_params(arch: ArchSpec, seed: int) -> ModelParams:
    """Glorot-uniform weights and zero biases, drawn in layer order."""
    return dense_init(arch.layers(), seed)


def _window(n: int, k: int) -> slice:
    lo = (n - k) // 2
    return slice(lo, lo + k)


def mask_center(x: np.ndarray, spec: MaskSpec) -> np.ndarray:
    """Apply the masking operator to one image or a stack of images (..., h, w)."""
    h, w = x.shape[-2:]
    spec.validate(h, w)
    rows, cols = _window(h, spec.k), _window(w, spec.k)
    if spec.mode == "inpaint-center":
        out = np.array(x, dtype=np.float64, copy=True)
        out[..., rows, cols] = 0.0
    else:
        out = np.zeros_like(x, dtype=np.float64)
        out[..., rows, cols] = x[..., rows, cols]
    return out


def _n_layers(params: ModelParams, group: str) -> int:
    return len(params.names_in(group)) // 2


def _dense_stack(params: ModelParams, group: str, h: Tensor, last: str) -> Tensor:
    n = _n_layers(params, group)
    for i in range(n):
        h = gc.add_bias(gc.matmul(h, params[f"{group}.{i}.weight"]), params[f"{group}.{i}.bias"])
        h = gc.sigmoid(h) if (i == n - 1 and last == "sigmoid") else gc.tanh(h)
    return h


def _flatten(images) -> Tensor:
    arr = images.data if isinstance(images, Tensor) else np.asarray(images, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    return Tensor(arr.reshape(arr.shape[0], -1))


def encode(params: ModelParams, x_masked) -> Tensor:
    """Latent codes (batch x latent) for a batch of already-masked images."""
    h = x_masked if isinstance(x_masked, Tensor) and x_masked.data.ndim == 2 else _flatten(x_masked)
    in_dim = params["enc.0.weight"].shape[0]
    if h.shape[1] != in_dim:
        raise ContractError(f"input has {h.shape[1]} pixels, model expects {in_dim}")
    return _dense_stack(params, "enc", h, last="tanh")


def decode(params: ModelParams, z: Tensor) -> Tensor:
    return _dense_stack(params, "dec", z, last="sigmoid")


def forward_flat(params: ModelParams, x_masked) -> Tensor:
    return decode(params, encode(params, x_masked))


def forward_reconstruct(params: ModelParams, x_masked: np.ndarray) -> np.ndarray:
    """Reconstruct one image (h, w) or a batch (n, h, w); returns the same shape."""
    x = np.asarray(x_masked, dtype=np.float64)
    y = forward_flat(params, x).data
    return y.reshape(x.shape)


def recon_loss(params: ModelParams, batch: Sequence[tuple[np.ndarray, MaskSpec]]) -> Tensor:
    """Mean over the batch of per-image MSE between reconstruction and the clean image."""
    if len(batch) == 0:
        raise ContractError("recon_loss: empty batch")
    specs = {spec for _, spec in batch}
    xs = np.stack([np.asarray(x, dtype=np.float64) for x, _ in batch])
    if len(specs) == 1:
        masked = mask_center(xs, next(iter(specs)))
    else:
        masked = np.stack([mask_center(x, spec) for x, spec in batch])
    return image_loss(params, masked, xs)


def image_loss(params: ModelParams, masked: np.ndarray, targets: np.ndarray) -> Tensor:
    """MSE between reconstructions of ``masked`` and ``targets`` (n, h, w).

    Equal image sizes make the mean of per-image MSEs identical to one MSE over
    the whole batch.
    """
    pred = forward_flat(params, masked)
    return gc.mse_loss(pred, Tensor(targets.reshape(targets.shape[0], -1)))


@dataclass
class TrainConfig:
    epochs: int = 30
    eta: float = 1.0
    batch_size: int = 32
    seed: int = 0

    def validate(self) -> None:
        if not self.eta > 0:
            raise ContractError("eta must be > 0")
        if self.epochs < 0 or self.batch_size < 1:
            raise ContractError("epochs must be >= 0 and batch_size >= 1")


def minibatches(n: int, batch_size: int, rng: SplitMix64) -> list[np.ndarray]:
    order = rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


@dataclass
class ReconTask:
    """Reconstruction objective over a fixed image stack.

    ``targets`` defaults to ``images``; the auditor swaps in poisoned targets.
    """

    images: np.ndarray
    mask: MaskSpec
    targets: np.ndarray | None = None
    masked: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.masked = mask_center(self.images, self.mask)
        if self.targets is None:
            self.targets = self.images

    def __len__(self) -> int:
        return len(self.images)

    def loss(self, params: ModelParams, idx=None) -> Tensor:
        idx = slice(None) if idx is None else idx
        return image_loss(params, self.masked[idx], self.targets[idx])

    def outputs(self, params: ModelParams, idx=None) -> np.ndarray:
        idx = slice(None) if idx is None else idx
        return forward_flat(params, self.masked[idx]).data


def train(
    params: ModelParams,
    task: ReconTask,
    cfg: TrainConfig,
    on_epoch=None,
) -> tuple[ModelParams, list[float]]:
    """Plain minibatch SGD on ``task``; returns final params and epoch-mean losses."""
    cfg.validate()
    rng = SplitMix64(cfg.seed)
    history = []
    for epoch in range(cfg.epochs):
        losses = []
        for idx in minibatches(len(task), cfg.batch_size, rng):
            loss, grads = gc.value_and_grad(lambda p: task.loss(p, idx), params)
            params = gc.step(params, grads, cfg.eta, "descent")
            losses.append(float(loss) * len(idx))
        history.append(float(np.sum(losses)) / len(task))
        if on_epoch is not None:
            on_epoch(epoch, params)
    return params, history
