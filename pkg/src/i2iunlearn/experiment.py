"""End-to-end desk experiment: original model, attack model, unlearning methods,
audit, metrics, distance traces and the convex bound sweep.

Every model is written to an ``I2IU`` checkpoint and read back before use, so a
step run in a fresh process sees exactly the same (float32-rounded) weights as
one run in the same process.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict
from functools import cached_property
from pathlib import Path

import numpy as np

from . import gradcore as gc
from .auditor import AuditReport, PlusTemplate, audit_residual_rate, build_attack_model
from .baselines import BaselineConfig, retrain_oracle, run_baseline
from .config import ExperimentConfig, threshold_value
from .dataforge import DatasetSplit, ForgetSpec, LabeledCorpus, generate_shapes, load_idx, make_split, poison_plus
from .evalsuite import ProbeNet, evaluate_model, output_distance_trace, train_probe, write_rows_csv
from .i2imodel import ArchSpec, MaskSpec, ReconTask, TrainConfig, forward_reconstruct, init_params, mask_center, train
from .persist import emit_pgm_grid, load_checkpoint, save_checkpoint
from .unlearner import Certificate, UnlearnConfig, merged_objective, theory_check, unlearn_realistic

log = logging.getLogger(__name__)

METHODS = ("ours", "max-loss", "noisy-label", "random-encoder", "i2i-sota", "merged", "retrain")

TRACE_FIELDS = (
    "epoch", "phase", "loss_forget", "loss_retain", "grad_norm", "param_dist", "out_euclid", "out_cosine",
)


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.10g}"
    return str(v)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class Experiment:
    def __init__(self, cfg: ExperimentConfig, out_dir=None):
        self.cfg = cfg
        self.out = Path(out_dir or cfg.output_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / "config.json").write_text(cfg.dumps() + "\n")

    # -- data -----------------------------------------------------------------

    @cached_property
    def corpus(self) -> LabeledCorpus:
        c = self.cfg.corpus
        if c.kind == "idx":
            return load_idx(c.images, c.labels)
        return generate_shapes(c.seed, c.n_per_class)

    @cached_property
    def mask(self) -> MaskSpec:
        return MaskSpec(self.cfg.mask.mode, self.cfg.mask.k)

    @cached_property
    def arch(self) -> ArchSpec:
        h, w = self.corpus.images.shape[1:]
        return ArchSpec(input_dim=h * w, encoder_widths=tuple(self.cfg.arch.encoder_widths))

    @cached_property
    def split(self) -> DatasetSplit:
        s = self.cfg.split
        spec = ForgetSpec(s.mode, tuple(s.classes), s.fraction)
        split = make_split(self.corpus, spec, s.test_fraction, s.seed)
        split.poisoned = split.forget.copy()
        return split

    @property
    def forget_classes(self) -> list[int]:
        return list(self.cfg.split.classes)

    def images(self, idx) -> np.ndarray:
        return self.corpus.images[idx]

    @cached_property
    def forget_task(self) -> ReconTask:
        """The samples to unlearn, as the attacked model learned them ('+'-poisoned targets)."""
        x = self.images(self.split.forget)
        a = self.cfg.attack
        return ReconTask(x, self.mask, targets=poison_plus(x, a.arm, a.intensity))

    @cached_property
    def retain_task(self) -> ReconTask:
        return ReconTask(self.images(self.split.retain), self.mask)

    @cached_property
    def forget_test(self) -> np.ndarray:
        return self.images(self.split.test_in_classes(self.corpus.labels, self.forget_classes))

    @cached_property
    def retain_test(self) -> np.ndarray:
        return self.images(self.split.test_outside_classes(self.corpus.labels, self.forget_classes))

    @property
    def template(self) -> PlusTemplate:
        return PlusTemplate(self.cfg.attack.arm)

    @property
    def train_cfg(self) -> TrainConfig:
        t = self.cfg.train
        return TrainConfig(t.epochs, t.eta, t.batch_size, t.seed)

    @property
    def unlearn_cfg(self) -> UnlearnConfig:
        u = self.cfg.unlearn
        return UnlearnConfig(
            eta=u.eta,
            unlearn_epochs=u.unlearn_epochs,
            finetune_epochs=u.finetune_epochs,
            threshold=threshold_value(u),
            threshold_space=u.threshold_space,
            batch_size=u.batch_size,
            seed=u.seed,
            clip_norm=u.clip_norm,
            forget_weight=u.forget_weight,
        )

    # -- checkpoints ----------------------------------------------------------

    def ckpt_path(self, name: str) -> Path:
        return self.out / f"{name}.i2iu"

    def _materialize(self, name: str, build) -> gc.ModelParams:
        path = self.ckpt_path(name)
        if not path.exists():
            save_checkpoint(build(), path)
        return load_checkpoint(path)

    def has(self, name: str) -> bool:
        return self.ckpt_path(name).exists()

    def model(self, name: str) -> gc.ModelParams:
        builders = {
            "original": self._train_original,
            "attack": self._build_attack,
            "retrain": self._build_retrain,
        }
        if name in builders:
            return self._materialize(name, builders[name])
        if name.startswith("unlearned_"):
            path = self.ckpt_path(name)
            if not path.exists():
                self.unlearn(name[len("unlearned_") :])
            return load_checkpoint(path)
        raise KeyError(name)

    def _train_original(self) -> gc.ModelParams:
        train_idx = np.sort(np.concatenate([self.split.retain, self.split.forget]))
        task = ReconTask(self.images(train_idx), self.mask)
        params, hist = train(init_params(self.arch, self.cfg.train.init_seed), task, self.train_cfg)
        write_csv(self.out / "train_log.csv", ["epoch", "loss"], enumerate(hist, start=1))
        return params

    def _build_attack(self) -> gc.ModelParams:
        a = self.cfg.attack
        return build_attack_model(
            self.model("original"),
            self.images(self.split.forget),
            self.mask,
            TrainConfig(a.epochs, a.eta, a.batch_size, a.seed),
            arm=a.arm,
            intensity=a.intensity,
        )

    def _build_retrain(self) -> gc.ModelParams:
        return retrain_oracle(self.arch, self.retain_task, self.train_cfg, self.cfg.train.init_seed)

    # -- unlearning -----------------------------------------------------------

    def unlearn(self, method: str) -> gc.ModelParams:
        if method not in METHODS:
            raise ValueError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
        name = f"unlearned_{method}"
        if method == "retrain":
            params = self.model("retrain")
            save_checkpoint(params, self.ckpt_path(name))
            return load_checkpoint(self.ckpt_path(name))
        theta0 = self.model("attack")
        if method == "ours":
            params = self._unlearn_ours(theta0)
        elif method == "merged":
            params = merged_objective(
                theta0, self.forget_task, self.retain_task, self.unlearn_cfg,
                on_epoch=self._epoch_saver("merged"),
            )
        else:
            b = self.cfg.baselines
            std = b.pixel_noise_std if method == "noisy-label" else b.latent_noise_std
            bcfg = BaselineConfig(method, b.epochs, b.eta, std, b.batch_size, b.seed)
            params = run_baseline(theta0, self.forget_task, self.retain_task, bcfg)
        save_checkpoint(params, self.ckpt_path(name))
        return load_checkpoint(self.ckpt_path(name))

    def epoch_dir(self, method: str) -> Path:
        d = self.out / f"epochs_{method}"
        d.mkdir(exist_ok=True)
        return d

    def _epoch_saver(self, method: str):
        d = self.epoch_dir(method)
        for stale in d.glob("*.i2iu"):
            stale.unlink()
        counter = {"n": 0}

        def hook(phase: str, epoch: int, params: gc.ModelParams) -> None:
            counter["n"] += 1
            save_checkpoint(params, d / f"{counter['n']:04d}_{phase}.i2iu")

        save_checkpoint(self.model("attack"), d / "0000_start.i2iu")
        return hook

    def _unlearn_ours(self, theta0: gc.ModelParams) -> gc.ModelParams:
        probe = np.arange(min(self.cfg.eval.trace_probe_size, len(self.forget_task)))
        res = unlearn_realistic(
            theta0, self.forget_task, self.retain_task, self.unlearn_cfg,
            probe_idx=probe, on_epoch=self._epoch_saver("ours"),
        )
        rows = [
            (r.step, r.epoch + 1, r.batch_loss, r.grad_norm, int(r.clipped), r.loss, r.param_dist, r.out_dist)
            for r in res.trace.records
        ]
        write_csv(
            self.out / "ascent_steps_ours.csv",
            ["step", "epoch", "batch_loss", "grad_norm", "clipped", "loss_forget", "param_dist", "out_dist"],
            rows,
        )
        self._write_certificate(res.certificate, res.trace)
        return res.params

    def _write_certificate(self, cert: Certificate | None, trace) -> None:
        payload = {"T": trace.T, "stopped_early": trace.stopped_early,
                   "initial_loss": trace.initial_loss, "final_loss": trace.final_loss,
                   "final_grad_norm": trace.final_grad_norm}
        if cert is not None:
            payload.update(asdict(cert))
        payload["note"] = "g and G are empirical min/max of observed step gradient norms"
        (self.out / "certificate_ours.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")

    # -- audit / eval / trace -------------------------------------------------

    def available_models(self) -> list[str]:
        names = [n for n in ("original", "attack") if self.has(n)]
        names += [f"unlearned_{m}" for m in METHODS if self.has(f"unlearned_{m}")]
        return names

    def audit(self, names=None) -> dict[str, AuditReport]:
        names = names or self.available_models()
        rho = self.cfg.audit.rho
        test_idx = self.split.test_in_classes(self.corpus.labels, self.forget_classes)
        reports = {}
        summary = []
        for name in names:
            params = self.model(name)
            rep = audit_residual_rate(params, self.forget_test, self.template, rho, self.mask)
            rep.write_csv(self.out / f"audit_{name}.csv", indices=test_idx)
            reports[name] = rep
            summary.append((name, rep.residual_rate, rho, len(rep.scores)))
            n = min(self.cfg.audit.grid_images, len(self.forget_test))
            if n:
                y = forward_reconstruct(params, mask_center(self.forget_test[:n], self.mask))
                emit_pgm_grid(list(y), n, self.out / f"grid_{name}.pgm")
        write_csv(self.out / "audit_summary.csv", ["model", "residual_rate", "rho", "n"], summary)
        return reports

    @cached_property
    def probe(self) -> ProbeNet:
        e = self.cfg.eval
        train_idx = np.sort(np.concatenate([self.split.retain, self.split.forget]))
        return train_probe(
            self.images(train_idx), self.corpus.labels[train_idx], e.probe_seed,
            epochs=e.probe_epochs, eta=e.probe_eta,
        )

    def evaluate(self, names=None) -> dict:
        names = names or self.available_models()
        ref_name = {"retrain": "retrain", "attack": "attack", "original": "original"}[self.cfg.eval.reference]
        reference = self.model(ref_name)
        out = {}
        rows = []
        for name in names:
            rep = evaluate_model(self.model(name), reference, self.forget_test, self.retain_test, self.probe, self.mask)
            out[name] = rep
            for r in rep.rows():
                rows.append({"model": name, "reference": ref_name, **r})
        write_rows_csv(self.out / "metrics.csv", rows)
        return out

    def trace(self, method: str = "ours") -> list[dict]:
        """Per-epoch trace rebuilt from saved epoch checkpoints, distances measured to the retrained model."""
        d = self.out / f"epochs_{method}"
        files = sorted(d.glob("*.i2iu")) if d.exists() else []
        if not files:
            self.unlearn(method)
            files = sorted(d.glob("*.i2iu"))
        theta0 = self.model("attack")
        reference = self.model("retrain")
        n_probe = min(self.cfg.eval.trace_probe_size, len(self.forget_task))
        probe_batch = self.forget_task.masked[:n_probe]
        checkpoints = []
        for i, f in enumerate(files):
            phase = f.stem.split("_", 1)[1]
            phase = "ascent" if phase == "start" else phase
            checkpoints.append((phase, i, load_checkpoint(f)))
        dist = output_distance_trace(checkpoints, reference, probe_batch)
        rows = []
        for (phase, epoch, params), dr in zip(checkpoints, dist):
            task = self.retain_task if phase == "finetune" else self.forget_task
            _, grads = gc.value_and_grad(lambda p: task.loss(p), params)
            rows.append({
                "epoch": epoch,
                "phase": phase,
                "loss_forget": self.forget_task.loss(params).item(),
                "loss_retain": self.retain_task.loss(params).item(),
                "grad_norm": gc.grad_global_norm(grads),
                "param_dist": gc.param_l2_distance(params, theta0),
                "out_euclid": dr.euclidean,
                "out_cosine": dr.cosine,
            })
        write_csv(self.out / f"trace_{method}.csv", TRACE_FIELDS, [[r[k] for k in TRACE_FIELDS] for r in rows])
        return rows

    def theory_check(self, etas=(0.01, 0.05, 0.1), steps=(1, 5, 20), seed: int = 0, tol: float = 1e-9):
        checks = theory_check(etas, steps, seed=seed, tol=tol)
        write_csv(
            self.out / "theory_check.csv",
            ["eta", "T", "L0", "LT", "loss_gap", "lambda_max", "delta", "epsilon", "g", "G",
             "increasing", "lower_ok", "upper_ok"],
            [
                (c.eta, c.T, c.initial_loss, c.final_loss, c.certificate.observed_loss_gap,
                 c.certificate.lambda_max, c.certificate.delta, c.certificate.epsilon,
                 c.certificate.g, c.certificate.G, int(c.increasing), int(c.lower_ok), int(c.upper_ok))
                for c in checks
            ],
        )
        return checks

    def report(self) -> list[dict]:
        """Join audit summary and metrics into one row per model."""
        rows: dict[str, dict] = {}
        if (self.out / "audit_summary.csv").exists():
            for r in read_csv(self.out / "audit_summary.csv"):
                rows.setdefault(r["model"], {"model": r["model"]})["residual_rate"] = r["residual_rate"]
        if (self.out / "metrics.csv").exists():
            for r in read_csv(self.out / "metrics.csv"):
                row = rows.setdefault(r["model"], {"model": r["model"]})
                p = "Df" if r["partition"] == "forget" else "Dr"
                for k in ("fd", "inception", "similarity", "mse"):
                    row[f"{k}_{p}"] = r[k]
        cols = ["model", "residual_rate", "fd_Df", "fd_Dr", "inception_Df", "inception_Dr",
                "similarity_Df", "similarity_Dr", "mse_Df", "mse_Dr"]
        out = [{c: rows[m].get(c, "") for c in cols} for m in rows]
        write_csv(self.out / "summary.csv", cols, [[r[c] for c in cols] for r in out])
        return out

    def run_all(self, methods=("ours", "max-loss", "retrain")) -> None:
        self.model("original")
        self.model("attack")
        for m in methods:
            self.unlearn(m)
        self.audit()
        self.evaluate()
        if "ours" in methods:
            self.trace("ours")
        self.report()
