"""Backdoor audit: train a '+'-painting attack model, then measure how often a
model still paints the '+' into reconstructions of held-out inputs."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataforge import plus_mask, poison_plus
from .gradcore import ContractError, ModelParams
from .i2imodel import MaskSpec, ReconTask, TrainConfig, forward_reconstruct, mask_center, train


@dataclass(frozen=True)
class PlusTemplate:
    arm: int = 3

    @property
    def width(self) -> int:
        return 2 * self.arm + 1

    def mask(self) -> np.ndarray:
        """Binary (2*arm+1)^2 window holding the '+' as drawn by ``poison_plus``."""
        full = plus_mask(2 * self.arm + 2, 2 * self.arm + 2, self.arm)
        return full[1:, 1:]

    def render(self, height: int = 16, width: int = 16, background: float = 0.5, intensity: float = 1.0):
        return poison_plus(np.full((height, width), background), self.arm, intensity)


@dataclass
class AuditReport:
    scores: np.ndarray
    rho: float

    @property
    def flags(self) -> np.ndarray:
        return self.scores >= self.rho

    @property
    def residual_rate(self) -> float:
        return float(np.mean(self.flags)) if len(self.scores) else 0.0

    def write_csv(self, path, indices=None) -> None:
        indices = range(len(self.scores)) if indices is None else indices
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["index", "score", "flag"])
            for i, s, f in zip(indices, self.scores, self.flags):
                w.writerow([int(i), f"{s:.10f}", int(f)])
            w.writerow(["summary", f"{self.residual_rate:.10f}", f"rho={self.rho}"])


def _windows(y: np.ndarray, arm: int) -> np.ndarray:
    h, w = y.shape[-2:]
    if 2 * arm + 1 > min(h, w) or arm > min(h, w) // 2 - 1:
        raise ContractError(f"template arm {arm} does not fit {h}x{w} image")
    cy, cx = h // 2, w // 2
    return y[..., cy - arm : cy + arm + 1, cx - arm : cx + arm + 1]


def ncc_scores(y: np.ndarray, tpl: PlusTemplate) -> np.ndarray:
    """NCC of the central window of each image with the template; zero-variance windows score 0."""
    win = _windows(np.asarray(y, dtype=np.float64), tpl.arm)
    t = tpl.mask().astype(np.float64)
    t = t - t.mean()
    a = win - win.mean(axis=(-2, -1), keepdims=True)
    num = np.sum(a * t, axis=(-2, -1))
    den = np.sqrt(np.sum(a * a, axis=(-2, -1)) * np.sum(t * t))
    # relative floor: a window that is constant up to rounding counts as flat
    flat = np.sum(a * a, axis=(-2, -1)) <= 1e-24 * np.maximum(1.0, np.sum(win * win, axis=(-2, -1)))
    score = np.where(flat, 0.0, num / np.where(flat, 1.0, den))
    return np.clip(score, -1.0, 1.0)


def detect_plus(y: np.ndarray, tpl: PlusTemplate, rho: float = 0.6) -> tuple[bool, float]:
    score = float(ncc_scores(y, tpl))
    return score >= rho, score


def build_attack_model(
    theta0: ModelParams,
    forget_images: np.ndarray,
    mask: MaskSpec,
    cfg: TrainConfig,
    arm: int = 3,
    intensity: float = 1.0,
) -> ModelParams:
    """Fine-tune on the forget set with '+'-poisoned targets (inputs stay clean)."""
    if len(forget_images) == 0:
        raise ContractError("build_attack_model: empty forget set")
    task = ReconTask(forget_images, mask, targets=poison_plus(forget_images, arm, intensity))
    params, _ = train(theta0, task, cfg)
    return params


def audit_residual_rate(
    params: ModelParams,
    test_images: np.ndarray,
    tpl: PlusTemplate,
    rho: float,
    mask: MaskSpec,
) -> AuditReport:
    if len(test_images) == 0:
        raise ContractError("audit_residual_rate: empty test set")
    y = forward_reconstruct(params, mask_center(np.asarray(test_images), mask))
    return AuditReport(ncc_scores(y, tpl), rho)
