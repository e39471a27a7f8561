"""Two-phase unlearning: gradient-ascent decoupling, then retention fine-tuning.

Objectives are passed in as *tasks*: any object with ``len(task)``,
``task.loss(params, idx) -> Tensor`` and ``task.outputs(params, idx) -> ndarray``.
:class:`~i2iunlearn.i2imodel.ReconTask` is the autoencoder task and
:class:`LeastSquaresTask` the convex problem used to check the bounds.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from . import gradcore as gc
from .gradcore import ContractError, ModelParams, NonFiniteError, Tensor
from .rng import SplitMix64, derive_seed

log = logging.getLogger(__name__)


class DivergenceError(ArithmeticError):
    pass


class Task(Protocol):
    def __len__(self) -> int: ...
    def loss(self, params: ModelParams, idx=None) -> Tensor: ...
    def outputs(self, params: ModelParams, idx=None) -> np.ndarray: ...


@dataclass
class UnlearnConfig:
    eta: float = 0.5
    unlearn_epochs: int = 5
    finetune_epochs: int = 20
    threshold: float = math.inf
    threshold_space: str = "parameter"
    batch_size: int = 32
    seed: int = 0
    clip_norm: float = 10.0
    forget_weight: float = 1.0  # merged objective only

    def validate(self) -> None:
        if not self.eta > 0:
            raise ContractError("eta must be > 0")
        if self.unlearn_epochs < 0 or self.finetune_epochs < 0:
            raise ContractError("epoch counts must be >= 0")
        if not self.threshold >= 0:
            raise ContractError("threshold must be >= 0")
        if self.threshold_space not in ("parameter", "output"):
            raise ContractError("threshold_space must be 'parameter' or 'output'")
        if self.batch_size < 1:
            raise ContractError("batch_size must be >= 1")


@dataclass
class StepRecord:
    step: int
    epoch: int
    batch_loss: float  # at the pre-step iterate, on the step's batch
    grad_norm: float  # true (unclipped) norm of the step's gradient
    clipped: bool
    loss: float  # full forget loss at the post-step iterate
    param_dist: float
    out_dist: float


@dataclass
class AscentTrace:
    initial_loss: float
    records: list[StepRecord] = field(default_factory=list)
    final_grad_norm: float | None = None
    stopped_early: bool = False

    @property
    def T(self) -> int:
        return len(self.records)

    def grad_norms(self) -> list[float]:
        norms = [r.grad_norm for r in self.records]
        if self.final_grad_norm is not None:
            norms.append(self.final_grad_norm)
        return norms

    @property
    def g(self) -> float:
        return min(self.grad_norms()) if self.records else 0.0

    @property
    def G(self) -> float:
        return max(self.grad_norms()) if self.records else 0.0

    @property
    def final_loss(self) -> float:
        return self.records[-1].loss if self.records else self.initial_loss

    @property
    def clipped(self) -> bool:
        return any(r.clipped for r in self.records)

    def distance(self, space: str) -> list[float]:
        return [r.param_dist if space == "parameter" else r.out_dist for r in self.records]


@dataclass(frozen=True)
class Certificate:
    epsilon: float
    delta: float
    lambda_max: float
    observed_loss_gap: float
    eta: float
    T: int
    g: float
    G: float
    valid: bool = True

    def check_bounds(self, initial_loss: float, final_loss: float, tol: float = 1e-9) -> dict[str, bool]:
        """The two loss bounds implied by convexity (lower: growth, upper: delta)."""
        return {
            "lower": abs(final_loss - initial_loss) >= self.lambda_max - tol,
            "upper": final_loss <= initial_loss + self.delta + tol,
        }


def certify(trace: AscentTrace, eta: float) -> Certificate:
    if trace.T < 1:
        raise ContractError("certify: trace has no ascent steps")
    g, G = trace.g, trace.G
    if not g > 0:
        raise ContractError("certify: minimum gradient norm is zero; bounds need g > 0")
    T = trace.T
    if trace.clipped:
        log.warning("ascent gradients were clipped; certificate is void")
    return Certificate(
        epsilon=0.0,
        delta=eta * (T + 1) * G * G,
        lambda_max=eta * T * g * g,
        observed_loss_gap=abs(trace.final_loss - trace.initial_loss),
        eta=eta,
        T=T,
        g=g,
        G=G,
        valid=not trace.clipped,
    )


def _batches(n: int, batch_size: int, rng: SplitMix64) -> list[np.ndarray]:
    order = rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def _value_and_grad(task: Task, params: ModelParams, idx, where: str):
    try:
        loss, grads = gc.value_and_grad(lambda p: task.loss(p, idx), params)
    except NonFiniteError as exc:
        raise DivergenceError(f"{where}: {exc}") from exc
    if not math.isfinite(loss):
        raise DivergenceError(f"{where}: non-finite loss")
    return loss, grads


def output_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Mean per-sample Euclidean distance between two output batches."""
    d = (a - b).reshape(len(a), -1)
    return float(np.mean(np.sqrt(np.sum(d * d, axis=1))))


EpochHook = Callable[[str, int, ModelParams], None]


def ascend_decouple(
    theta0: ModelParams,
    forget: Task,
    cfg: UnlearnConfig,
    probe_idx=None,
    on_epoch: EpochHook | None = None,
) -> tuple[ModelParams, AscentTrace]:
    """Gradient ascent on the forget task until the distance guard fires or T_u epochs pass."""
    cfg.validate()
    if len(forget) == 0:
        raise ContractError("ascend_decouple: empty forget set")
    rng = SplitMix64(derive_seed(cfg.seed, "ascent"))
    ref_out = forget.outputs(theta0, probe_idx)
    trace = AscentTrace(initial_loss=forget.loss(theta0).item())
    params = theta0
    step = 0
    for epoch in range(cfg.unlearn_epochs):
        for idx in _batches(len(forget), cfg.batch_size, rng):
            step += 1
            batch_loss, grads = _value_and_grad(forget, params, idx, f"ascent step {step}")
            norm = gc.grad_global_norm(grads)
            grads, clipped = gc.clip_by_global_norm(grads, cfg.clip_norm)
            if clipped:
                log.info("ascent step %d: gradient norm %.4g clipped to %.4g", step, norm, cfg.clip_norm)
            try:
                params = gc.step(params, grads, cfg.eta, "ascent")
                full = forget.loss(params).item()
            except NonFiniteError as exc:
                raise DivergenceError(f"ascent step {step}: {exc}") from exc
            rec = StepRecord(
                step=step,
                epoch=epoch,
                batch_loss=batch_loss,
                grad_norm=norm,
                clipped=clipped,
                loss=full,
                param_dist=gc.param_l2_distance(params, theta0),
                out_dist=output_distance(forget.outputs(params, probe_idx), ref_out),
            )
            trace.records.append(rec)
            dist = rec.param_dist if cfg.threshold_space == "parameter" else rec.out_dist
            if dist >= cfg.threshold:
                trace.stopped_early = True
                break
        if on_epoch is not None:
            on_epoch("ascent", epoch, params)
        if trace.stopped_early:
            break
    if trace.records:
        _, grads = _value_and_grad(forget, params, None, "ascent final gradient")
        trace.final_grad_norm = gc.grad_global_norm(grads)
    return params, trace


def retention_finetune(
    theta_u: ModelParams,
    retain: Task,
    cfg: UnlearnConfig,
    on_epoch: EpochHook | None = None,
    frozen=(),
) -> ModelParams:
    cfg.validate()
    if len(retain) == 0:
        raise ContractError("retention_finetune: empty retain set")
    rng = SplitMix64(derive_seed(cfg.seed, "finetune"))
    params = theta_u
    for epoch in range(cfg.finetune_epochs):
        for idx in _batches(len(retain), cfg.batch_size, rng):
            _, grads = _value_and_grad(retain, params, idx, f"fine-tune epoch {epoch}")
            params = gc.step(params, grads, cfg.eta, "descent", frozen=frozen)
        if on_epoch is not None:
            on_epoch("finetune", epoch, params)
    return params


@dataclass
class UnlearnResult:
    params: ModelParams
    ascent_params: ModelParams
    trace: AscentTrace
    certificate: Certificate | None


def unlearn_realistic(
    theta0: ModelParams,
    forget: Task,
    retain: Task,
    cfg: UnlearnConfig,
    probe_idx=None,
    on_epoch: EpochHook | None = None,
) -> UnlearnResult:
    theta_u, trace = ascend_decouple(theta0, forget, cfg, probe_idx, on_epoch)
    cert = certify(trace, cfg.eta) if trace.T >= 1 and trace.g > 0 else None
    final = retention_finetune(theta_u, retain, cfg, on_epoch)
    return UnlearnResult(final, theta_u, trace, cert)


def merged_objective(
    theta0: ModelParams,
    forget: Task,
    retain: Task,
    cfg: UnlearnConfig,
    on_epoch: EpochHook | None = None,
) -> ModelParams:
    """Descent on ``L_retain - w * L_forget`` for T_u + T_f epochs over the retain set.

    Forget batches are cycled alongside retain batches. The retain batch order
    comes from the same stream as ``retention_finetune``, so ``forget_weight=0``
    reproduces plain fine-tuning for T_u + T_f epochs exactly.
    """
    cfg.validate()
    if len(forget) == 0 or len(retain) == 0:
        raise ContractError("merged_objective: empty forget or retain set")
    rng = SplitMix64(derive_seed(cfg.seed, "finetune"))
    forget_rng = SplitMix64(derive_seed(cfg.seed, "merged-forget"))
    w = cfg.forget_weight
    params = theta0
    forget_queue: list[np.ndarray] = []
    for epoch in range(cfg.unlearn_epochs + cfg.finetune_epochs):
        for idx in _batches(len(retain), cfg.batch_size, rng):
            if not forget_queue:
                forget_queue = _batches(len(forget), cfg.batch_size, forget_rng)
            fidx = forget_queue.pop(0)

            def objective(p, idx=idx, fidx=fidx):
                lr = retain.loss(p, idx)
                if w == 0:
                    return lr
                return gc.sub(lr, gc.scale(forget.loss(p, fidx), w))

            try:
                _, grads = gc.value_and_grad(objective, params)
                params = gc.step(params, grads, cfg.eta, "descent")
            except NonFiniteError as exc:
                raise DivergenceError(f"merged epoch {epoch}: {exc}") from exc
        if on_epoch is not None:
            on_epoch("merged", epoch, params)
    return params


# -- convex theory-check problem ---------------------------------------------


@dataclass
class LeastSquaresTask:
    """``L(w) = 0.5 * ||A w - b||^2`` over the selected rows; params hold one entry ``w``."""

    A: np.ndarray
    b: np.ndarray

    def __len__(self) -> int:
        return len(self.b)

    def loss(self, params: ModelParams, idx=None) -> Tensor:
        idx = slice(None) if idx is None else idx
        A = Tensor(self.A[idx])
        r = gc.sub(gc.matmul(A, params["w"]), Tensor(self.b[idx].reshape(-1, 1)))
        return gc.scale(gc.total(gc.mul(r, r)), 0.5)

    def outputs(self, params: ModelParams, idx=None) -> np.ndarray:
        idx = slice(None) if idx is None else idx
        return self.A[idx] @ params["w"].data


def least_squares_problem(seed: int = 0, rows: int = 8, cols: int = 4) -> tuple[LeastSquaresTask, ModelParams]:
    """Seeded 8x4 least-squares problem and a starting point off the minimiser."""
    rng = SplitMix64(derive_seed(seed, "theory"))
    # 1/sqrt(rows) keeps the Hessian spectrum near 1 so eta <= 0.1 stays well-conditioned
    A = rng.normal(rows * cols).reshape(rows, cols) / np.sqrt(rows)
    b = rng.normal(rows)
    w0 = rng.normal(cols).reshape(cols, 1)
    return LeastSquaresTask(A, b), ModelParams.from_arrays({"w": w0})


@dataclass
class BoundCheck:
    eta: float
    T: int
    initial_loss: float
    final_loss: float
    certificate: Certificate
    increasing: bool
    lower_ok: bool
    upper_ok: bool

    @property
    def ok(self) -> bool:
        return self.increasing and self.lower_ok and self.upper_ok


def theory_check(etas, steps, seed: int = 0, tol: float = 1e-9) -> list[BoundCheck]:
    """Run T full-batch ascent steps on the convex problem for every (eta, T) pair."""
    task, w0 = least_squares_problem(seed)
    out = []
    for eta in etas:
        for T in steps:
            cfg = UnlearnConfig(
                eta=eta, unlearn_epochs=T, batch_size=len(task), seed=seed, clip_norm=math.inf
            )
            _, trace = ascend_decouple(w0, task, cfg)
            cert = certify(trace, eta)
            losses = [trace.initial_loss] + [r.loss for r in trace.records]
            bounds = cert.check_bounds(trace.initial_loss, trace.final_loss, tol)
            out.append(
                BoundCheck(
                    eta=eta,
                    T=T,
                    initial_loss=trace.initial_loss,
                    final_loss=trace.final_loss,
                    certificate=cert,
                    increasing=all(b > a for a, b in zip(losses, losses[1:])),
                    lower_ok=bounds["lower"],
                    upper_ok=bounds["upper"],
                )
            )
    return out
