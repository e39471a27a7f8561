import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from i2iunlearn import gradcore as gc
from i2iunlearn.dataforge import generate_shapes
from i2iunlearn.gradcore import ContractError
from i2iunlearn.i2imodel import (
    ArchSpec,
    MaskSpec,
    ReconTask,
    TrainConfig,
    decode,
    encode,
    forward_reconstruct,
    init_params,
    mask_center,
    recon_loss,
    train,
)

images16 = arrays(np.float64, (16, 16), elements=st.floats(0, 1))


@pytest.fixture(scope="module")
def shapes():
    return generate_shapes(0, 50)


def test_init_params_determinism_and_biases():
    arch = ArchSpec()
    a, b, c = init_params(arch, 0), init_params(arch, 0), init_params(arch, 1)
    assert a.equal(b)
    assert not a.equal(c)
    for name, t in a.items():
        if name.endswith(".bias"):
            assert np.all(t.data == 0)
        else:
            fan_in, fan_out = t.shape
            assert np.max(np.abs(t.data)) <= np.sqrt(6 / (fan_in + fan_out))


def test_arch_mirror_and_latent():
    arch = ArchSpec()
    assert arch.decoder_widths == (64, 256, 256)
    assert arch.latent_dim == 16
    assert [l[0] for l in arch.layers()] == ["enc.0", "enc.1", "enc.2", "dec.0", "dec.1", "dec.2"]
    with pytest.raises(ContractError):
        ArchSpec(decoder_widths=(64, 100))


def test_mask_examples():
    x = np.random.default_rng(0).uniform(0.1, 1, (16, 16))
    assert np.array_equal(mask_center(x, MaskSpec(k=0)), x)
    assert np.all(mask_center(x, MaskSpec(k=16)) == 0)
    m = mask_center(x, MaskSpec(k=4))
    zeroed = np.argwhere(m == 0)
    assert len(zeroed) == 16
    assert set(zeroed[:, 0]) == {6, 7, 8, 9} and set(zeroed[:, 1]) == {6, 7, 8, 9}
    with pytest.raises(ContractError):
        mask_center(x, MaskSpec(k=17))
    with pytest.raises(ContractError):
        mask_center(x, MaskSpec(mode="blur", k=4))


def test_outpaint_keeps_only_window():
    x = np.ones((16, 16))
    m = mask_center(x, MaskSpec("outpaint-border", 4))
    assert m.sum() == 16 and np.all(m[6:10, 6:10] == 1)


@given(images16, st.integers(0, 16), st.sampled_from(["inpaint-center", "outpaint-border"]))
def test_mask_idempotent_and_pure(x, k, mode):
    spec = MaskSpec(mode, k)
    before = x.copy()
    once = mask_center(x, spec)
    assert np.array_equal(mask_center(once, spec), once)
    assert np.array_equal(x, before)


def test_forward_shape_and_zero_weights():
    arch = ArchSpec()
    params = init_params(arch, 0)
    x = np.random.default_rng(1).uniform(size=(3, 16, 16))
    y = forward_reconstruct(params, x)
    assert y.shape == x.shape and np.all((y >= 0) & (y <= 1))
    assert forward_reconstruct(params, x[0]).shape == (16, 16)
    zero = params.map(np.zeros_like)
    assert np.all(forward_reconstruct(zero, x) == 0.5)
    with pytest.raises(ContractError):
        forward_reconstruct(params, np.zeros((2, 8, 8)))


def test_forward_is_decode_of_encode():
    params = init_params(ArchSpec(), 3)
    x = np.random.default_rng(2).uniform(size=(4, 16, 16))
    composed = decode(params, encode(params, x)).data.reshape(x.shape)
    assert np.array_equal(composed, forward_reconstruct(params, x))


def test_recon_loss_examples(shapes):
    params = init_params(ArchSpec(), 0)
    xs = shapes.images[:5]
    spec = MaskSpec(k=8)
    with pytest.raises(ContractError):
        recon_loss(params, [])
    single = recon_loss(params, [(xs[0], spec)]).item()
    y = forward_reconstruct(params, mask_center(xs[0], spec))
    assert single == pytest.approx(np.mean((y - xs[0]) ** 2), abs=1e-15)
    each = [recon_loss(params, [(x, spec)]).item() for x in xs]
    assert recon_loss(params, [(x, spec) for x in xs]).item() == pytest.approx(np.mean(each), abs=1e-12)


def test_overfit_single_image(shapes):
    task = ReconTask(shapes.images[:1], MaskSpec(k=0))
    params, history = train(init_params(ArchSpec(), 0), task, TrainConfig(epochs=300, eta=1.0, batch_size=1))
    assert task.loss(params).item() < 1e-3


@pytest.mark.parametrize("seed", [0, 1])
def test_training_sanity(shapes, seed):
    task = ReconTask(shapes.images[::3][:100], MaskSpec(k=4))
    _, history = train(init_params(ArchSpec(), seed), task, TrainConfig(epochs=5, eta=0.05, batch_size=32, seed=seed))
    assert all(b < a for a, b in zip(history, history[1:]))


def test_train_is_deterministic(shapes):
    task = ReconTask(shapes.images[:40], MaskSpec(k=8))
    cfg = TrainConfig(epochs=2, eta=1.0, batch_size=16, seed=4)
    a, ha = train(init_params(ArchSpec(), 0), task, cfg)
    b, hb = train(init_params(ArchSpec(), 0), task, cfg)
    assert a.equal(b) and ha == hb


@settings(max_examples=10, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**32))
def test_task_loss_matches_recon_loss(n, seed):
    x = np.random.default_rng(seed).uniform(size=(n, 16, 16))
    params = init_params(ArchSpec(), seed % 7)
    spec = MaskSpec(k=4)
    a = ReconTask(x, spec).loss(params).item()
    b = recon_loss(params, [(xi, spec) for xi in x]).item()
    assert a == b
    _, g = gc.value_and_grad(lambda p: ReconTask(x, spec).loss(p), params)
    assert gc.grad_global_norm(g) > 0
