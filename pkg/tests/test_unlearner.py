import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from i2iunlearn.gradcore import ContractError
from i2iunlearn.unlearner import (
    AscentTrace,
    DivergenceError,
    StepRecord,
    UnlearnConfig,
    ascend_decouple,
    certify,
    least_squares_problem,
    merged_objective,
    retention_finetune,
    theory_check,
    unlearn_realistic,
)


def _trace(norms, losses=None, final=None):
    losses = losses or [float(i + 1) for i in range(len(norms))]
    recs = [StepRecord(i + 1, 0, 0.0, n, False, l, 0.0, 0.0) for i, (n, l) in enumerate(zip(norms, losses))]
    return AscentTrace(0.0, recs, final_grad_norm=final)


def test_certify_examples():
    c = certify(_trace([2.0, 3.0, 2.5, 3.0, 2.0]), 0.1)
    assert c.T == 5 and c.g == 2.0 and c.G == 3.0
    assert c.lambda_max == pytest.approx(2.0, abs=1e-12)
    assert c.delta == pytest.approx(5.4, abs=1e-12)
    assert c.epsilon == 0.0
    one = certify(_trace([1.5]), 0.2)
    assert one.lambda_max == pytest.approx(0.2 * 1.5**2) and one.delta == pytest.approx(2 * 0.2 * 1.5**2)


def test_certify_includes_final_gradient():
    c = certify(_trace([2.0, 3.0], final=4.0), 0.1)
    assert c.G == 4.0 and c.g == 2.0


def test_certify_errors():
    with pytest.raises(ContractError):
        certify(AscentTrace(0.0), 0.1)
    with pytest.raises(ContractError):
        certify(_trace([0.0, 0.0]), 0.1)


def test_config_validation():
    for bad in (dict(eta=0), dict(unlearn_epochs=-1), dict(threshold=-1.0), dict(threshold_space="x")):
        with pytest.raises(ContractError):
            UnlearnConfig(**bad).validate()


# -- convex problem -----------------------------------------------------------------


@pytest.fixture
def ls():
    return least_squares_problem(0)


def test_infinite_threshold_runs_all_epochs(ls):
    task, w0 = ls
    cfg = UnlearnConfig(eta=0.05, unlearn_epochs=3, batch_size=3, clip_norm=math.inf)
    _, trace = ascend_decouple(w0, task, cfg)
    assert trace.T == 3 * math.ceil(len(task) / 3) and not trace.stopped_early


def test_zero_threshold_stops_after_one_step(ls):
    task, w0 = ls
    _, trace = ascend_decouple(w0, task, UnlearnConfig(eta=0.05, unlearn_epochs=3, threshold=0.0))
    assert trace.T == 1 and trace.stopped_early


@pytest.mark.parametrize("space", ["parameter", "output"])
def test_early_stop_at_reference_step(ls, space):
    task, w0 = ls
    base = UnlearnConfig(eta=0.05, unlearn_epochs=4, batch_size=2, clip_norm=math.inf, threshold_space=space)
    _, ref = ascend_decouple(w0, task, base)
    lam = ref.distance(space)[2]
    _, rerun = ascend_decouple(w0, task, dataclasses.replace(base, threshold=lam))
    assert rerun.T == 3 and rerun.stopped_early
    d = rerun.distance(space)
    assert all(x < lam for x in d[:-1]) and d[-1] >= lam


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 50), st.floats(0.001, 0.2), st.integers(1, 8))
def test_convex_ascent_strictly_increases(seed, eta, steps):
    task, w0 = least_squares_problem(seed)
    cfg = UnlearnConfig(eta=eta, unlearn_epochs=steps, batch_size=len(task), clip_norm=math.inf)
    _, trace = ascend_decouple(w0, task, cfg)
    losses = [trace.initial_loss] + [r.loss for r in trace.records]
    assert all(b > a for a, b in zip(losses, losses[1:]))


def test_theory_check_grid():
    checks = theory_check((0.01, 0.05, 0.1), (1, 5, 20))
    assert len(checks) == 9
    for c in checks:
        assert c.ok, c
        cert = c.certificate
        assert cert.epsilon == 0.0
        assert cert.lambda_max == pytest.approx(c.eta * c.T * cert.g**2, rel=1e-14)
        assert cert.delta == pytest.approx(c.eta * (c.T + 1) * cert.G**2, rel=1e-14)


def test_divergence_is_reported(ls):
    task, w0 = ls
    with pytest.raises(DivergenceError, match="ascent step"):
        ascend_decouple(w0, task, UnlearnConfig(eta=1e120, unlearn_epochs=10, clip_norm=math.inf))


def test_clipping_voids_certificate(ls):
    task, w0 = ls
    _, trace = ascend_decouple(w0, task, UnlearnConfig(eta=0.05, unlearn_epochs=2, clip_norm=1e-3))
    assert trace.clipped and not certify(trace, 0.05).valid


def test_unlearn_realistic_on_convex_problem(ls):
    task, w0 = ls
    cfg = UnlearnConfig(eta=0.05, unlearn_epochs=3, finetune_epochs=4, clip_norm=math.inf)
    res = unlearn_realistic(w0, task, task, cfg)
    assert res.certificate.epsilon == 0.0
    assert res.certificate == certify(res.trace, cfg.eta)
    assert res.certificate.lambda_max == pytest.approx(cfg.eta * res.trace.T * res.trace.g**2, rel=1e-14)
    assert task.loss(res.params).item() <= task.loss(res.ascent_params).item()


def test_finetune_noop_and_determinism(ls):
    task, w0 = ls
    cfg = UnlearnConfig(eta=0.05, finetune_epochs=0)
    assert retention_finetune(w0, task, cfg).equal(w0)
    cfg = dataclasses.replace(cfg, finetune_epochs=3, batch_size=3)
    assert retention_finetune(w0, task, cfg).equal(retention_finetune(w0, task, cfg))


def test_merged_zero_weight_is_finetuning(ls):
    task, w0 = ls
    cfg = UnlearnConfig(eta=0.05, unlearn_epochs=2, finetune_epochs=3, batch_size=3, forget_weight=0.0)
    merged = merged_objective(w0, task, task, cfg)
    plain = retention_finetune(w0, task, dataclasses.replace(cfg, unlearn_epochs=0, finetune_epochs=5))
    assert merged.equal(plain)


# -- desk autoencoder -----------------------------------------------------------------


def test_desk_finetune_reduces_retain_loss(desk):
    cfg = dataclasses.replace(desk.unlearn_cfg, unlearn_epochs=2, finetune_epochs=2)
    res = unlearn_realistic(desk.model("attack"), desk.forget_task, desk.retain_task, cfg)
    assert desk.retain_task.loss(res.params).item() <= desk.retain_task.loss(res.ascent_params).item()
    assert res.trace.T == 2 * math.ceil(len(desk.forget_task) / cfg.batch_size)


def test_desk_early_stop_output_distance(desk):
    base = dataclasses.replace(desk.unlearn_cfg, unlearn_epochs=2, threshold_space="output")
    probe = np.arange(16)
    _, ref = ascend_decouple(desk.model("attack"), desk.forget_task, base, probe_idx=probe)
    lam = ref.distance("output")[3]
    _, trace = ascend_decouple(
        desk.model("attack"), desk.forget_task, dataclasses.replace(base, threshold=lam), probe_idx=probe
    )
    assert trace.stopped_early and trace.records[-1].out_dist >= lam


def test_desk_merged_first_epochs(desk):
    # at the desk default eta=8 with unit forget weight the ascent term swamps the
    # retain term in early epochs; the trade-off shows at a gentler setting
    cfg = dataclasses.replace(desk.unlearn_cfg, eta=0.5, forget_weight=0.5, unlearn_epochs=3, finetune_epochs=0)
    retain, forget = [], []

    def hook(phase, epoch, params):
        retain.append(desk.retain_task.loss(params).item())
        forget.append(desk.forget_task.loss(params).item())

    merged_objective(desk.model("attack"), desk.forget_task, desk.retain_task, cfg, on_epoch=hook)
    assert all(b < a for a, b in zip(retain, retain[1:]))
    assert all(b > a for a, b in zip(forget, forget[1:]))
