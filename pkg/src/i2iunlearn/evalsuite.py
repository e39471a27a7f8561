"""FD/IS-proxy metrics in the feature space of a small frozen probe classifier."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, fields
from typing import Sequence

import numpy as np

from . import gradcore as gc
from .gradcore import ContractError, ModelParams, Tensor
from .i2imodel import MaskSpec, dense_init, forward_reconstruct, mask_center, minibatches
from .rng import SplitMix64, derive_seed

log = logging.getLogger(__name__)

FEATURE_DIM = 16


class UnfitProbeError(RuntimeError):
    pass


@dataclass(frozen=True)
class ProbeNet:
    params: ModelParams
    accuracy: float
    n_classes: int

    def features(self, images: np.ndarray) -> np.ndarray:
        """Penultimate pre-activations, shape (n, 16).

        Taken before the tanh: trained probe units sit near +-1, where distinct
        outputs collapse onto the same code and FD stops resolving them.
        """
        x = np.asarray(images, dtype=np.float64)
        h = x.reshape(-1, self.params["probe.0.weight"].shape[0])
        n = len(self.params) // 2
        for i in range(n - 1):
            if i:
                h = np.tanh(h)
            h = h @ self.params[f"probe.{i}.weight"].data + self.params[f"probe.{i}.bias"].data
        return h

    def logits(self, images: np.ndarray) -> np.ndarray:
        last = len(self.params) // 2 - 1
        return np.tanh(self.features(images)) @ self.params[f"probe.{last}.weight"].data + self.params[f"probe.{last}.bias"].data

    def probs(self, images: np.ndarray) -> np.ndarray:
        return gc.softmax(self.logits(images))

    def predict(self, images: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(images), axis=1)


def _probe_logits(params: ModelParams, x: Tensor) -> Tensor:
    n = len(params) // 2
    h = x
    for i in range(n):
        h = gc.add_bias(gc.matmul(h, params[f"probe.{i}.weight"]), params[f"probe.{i}.bias"])
        if i < n - 1:
            h = gc.tanh(h)
    return h


def train_probe(
    images: np.ndarray,
    labels: np.ndarray,
    seed: int,
    epochs: int = 40,
    eta: float = 0.5,
    batch_size: int = 32,
    min_accuracy: float = 0.9,
) -> ProbeNet:
    labels = np.asarray(labels, dtype=np.int64)
    k = int(labels.max()) + 1
    if len(np.unique(labels)) < 2:
        raise ContractError("train_probe: need at least two classes")
    flat = np.asarray(images, dtype=np.float64).reshape(len(images), -1)
    d = flat.shape[1]
    params = dense_init(
        [("probe.0", d, 64), ("probe.1", 64, FEATURE_DIM), ("probe.2", FEATURE_DIM, k)],
        derive_seed(seed, "probe-init"),
    )
    rng = SplitMix64(derive_seed(seed, "probe-batches"))
    for _ in range(epochs):
        for idx in minibatches(len(flat), batch_size, rng):
            x = Tensor(flat[idx])
            _, grads = gc.value_and_grad(lambda p: gc.cross_entropy(_probe_logits(p, x), labels[idx]), params)
            params = gc.step(params, grads, eta, "descent")
    probe = ProbeNet(params, 0.0, k)
    acc = float(np.mean(probe.predict(flat) == labels))
    if acc < min_accuracy:
        raise UnfitProbeError(f"probe training accuracy {acc:.3f} < {min_accuracy}")
    return ProbeNet(params, acc, k)


@dataclass(frozen=True)
class FeatureStats:
    mu: np.ndarray
    sigma: np.ndarray
    n: int

    @classmethod
    def from_features(cls, feats: np.ndarray) -> "FeatureStats":
        feats = np.asarray(feats, dtype=np.float64)
        n, d = feats.shape
        if n < 2:
            raise ContractError("need at least two samples for a covariance")
        if n <= 2 * d:
            log.warning("covariance from %d samples in %d dims is poorly conditioned", n, d)
        mu = feats.mean(axis=0)
        c = feats - mu
        sigma = c.T @ c / (n - 1)
        return cls(mu, 0.5 * (sigma + sigma.T), n)


def sqrtm_psd(m: np.ndarray) -> np.ndarray:
    """Symmetric square root with negative eigenvalues clamped to zero."""
    sym = 0.5 * (m + m.T)
    w, v = np.linalg.eigh(sym)
    neg = w < 0
    if np.any(neg):
        log.debug("clamped %d negative eigenvalue(s), most negative %.3g", int(neg.sum()), float(w.min()))
    w = np.where(neg, 0.0, w)
    return (v * np.sqrt(w)) @ v.T


def frechet_distance(a: FeatureStats, b: FeatureStats) -> float:
    if a.mu.shape != b.mu.shape or a.sigma.shape != b.sigma.shape:
        raise ContractError(f"frechet_distance: dims {a.mu.shape} vs {b.mu.shape}")
    diff = a.mu - b.mu
    ra = sqrtm_psd(a.sigma)
    cross = sqrtm_psd(ra @ b.sigma @ ra)
    fd = float(diff @ diff + np.trace(a.sigma) + np.trace(b.sigma) - 2.0 * np.trace(cross))
    return max(fd, 0.0)


def inception_score(probs: np.ndarray) -> float:
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 2 or len(p) == 0:
        raise ContractError("inception_score: expected a non-empty n x K array")
    if np.any(p < 0) or np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-6):
        raise ContractError("inception_score: rows must be probability distributions")
    marginal = p.mean(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * (np.log(p) - np.log(marginal)), 0.0)
    return float(math.exp(terms.sum(axis=1).mean()))


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu, nv = float(np.linalg.norm(u)), float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def semantic_similarity(y: np.ndarray, x: np.ndarray, probe: ProbeNet) -> float:
    f = probe.features(np.stack([y, x]))
    return cosine(f[0], f[1])


@dataclass
class TraceRow:
    epoch: int
    phase: str
    euclidean: float
    cosine: float


def output_distance_trace(
    checkpoints: Sequence[tuple[str, int, ModelParams]],
    reference: ModelParams,
    probe_batch: np.ndarray,
) -> list[TraceRow]:
    """Mean Euclidean and cosine distance between each checkpoint's outputs and the reference's."""
    if len(probe_batch) == 0:
        raise ContractError("output_distance_trace: empty probe batch")
    ref = forward_reconstruct(reference, probe_batch).reshape(len(probe_batch), -1)
    rows = []
    for phase, epoch, params in checkpoints:
        out = forward_reconstruct(params, probe_batch).reshape(len(probe_batch), -1)
        d = out - ref
        euc = float(np.mean(np.sqrt(np.sum(d * d, axis=1))))
        cos = float(np.mean([1.0 - cosine(a, b) for a, b in zip(out, ref)]))
        rows.append(TraceRow(epoch, phase, euc, cos))
    return rows


@dataclass
class PartitionMetrics:
    fd: float
    inception: float
    similarity: float
    mse: float


@dataclass
class MetricsReport:
    forget: PartitionMetrics
    retain: PartitionMetrics

    def rows(self) -> list[dict]:
        out = []
        for name in ("forget", "retain"):
            m = getattr(self, name)
            out.append({"partition": name, **{f.name: getattr(m, f.name) for f in fields(m)}})
        return out


def _partition_metrics(params, reference, images, probe, mask) -> PartitionMetrics:
    masked = mask_center(images, mask)
    y = forward_reconstruct(params, masked)
    y_ref = y if reference is params else forward_reconstruct(reference, masked)
    fa, fr, fx = probe.features(y), probe.features(y_ref), probe.features(images)
    return PartitionMetrics(
        fd=frechet_distance(FeatureStats.from_features(fa), FeatureStats.from_features(fr)),
        inception=inception_score(probe.probs(y)),
        similarity=float(np.mean([cosine(a, b) for a, b in zip(fa, fx)])),
        mse=float(np.mean((y - images) ** 2)),
    )


def evaluate_model(
    params: ModelParams,
    reference: ModelParams,
    forget_images: np.ndarray,
    retain_images: np.ndarray,
    probe: ProbeNet,
    mask: MaskSpec,
) -> MetricsReport:
    """FD to ``reference`` outputs, IS-proxy, similarity to ground truth and MSE per partition."""
    return MetricsReport(
        forget=_partition_metrics(params, reference, forget_images, probe, mask),
        retain=_partition_metrics(params, reference, retain_images, probe, mask),
    )


def write_rows_csv(path, rows: list[dict]) -> None:
    if not rows:
        raise ContractError("no rows to write")
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.10g}" if isinstance(v, float) else v) for k, v in r.items()})
