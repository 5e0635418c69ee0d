import numpy as np
import pytest
from hypothesis import given, strategies as st

from hybridcodec.diffdecode import (
    GradientTape,
    d_add_residual,
    d_clip,
    d_deblock,
    d_round8,
    d_warp,
    gop_loss,
    reconstruct_gop_diff,
)
from hybridcodec.errors import StructureError
from hybridcodec.frameio import Frame, synth_sequence
from hybridcodec.toycodec import BoundaryMask, CodecConfig, MotionField, decode_gop, encode_gop


def fd_grad(f, x, coords, eps=1e-4):
    out = []
    for idx in coords:
        xp, xm = x.copy(), x.copy()
        xp[idx] += eps
        xm[idx] -= eps
        out.append((f(xp) - f(xm)) / (2 * eps))
    return np.array(out)


def analytic(op, x, weights):
    tape = GradientTape()
    xt = tape.watch(x)
    y = op(xt)
    tape.backward(y, seed=weights)
    return xt.grad


def sample_coords(r, shape, n=40):
    return [tuple(r.integers(0, s) for s in shape) for _ in range(n)]


def rel_err(a, b):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)


def test_warp_gradient_matches_fd():
    r = np.random.default_rng(3)
    x = r.random((16, 16))
    wts = r.normal(size=(16, 16))
    mv = MotionField(r.integers(-5, 6, (1, 1, 2)))
    g = analytic(lambda t: d_warp(t, mv), x, wts)
    coords = sample_coords(r, x.shape)
    num = fd_grad(lambda v: float(np.sum(wts * d_warp(GradientTape().watch(v), mv).values)), x, coords)
    assert rel_err(np.array([g[c] for c in coords]), num).max() < 1e-6


def test_warp_zero_mv_passes_gradient():
    x = np.random.default_rng(0).random((16, 16))
    w = np.random.default_rng(1).normal(size=(16, 16))
    np.testing.assert_array_equal(analytic(lambda t: d_warp(t, MotionField.zeros(16, 16)), x, w), w)


def test_warp_adjoint_conserves_gradient_mass():
    r = np.random.default_rng(5)
    mv = MotionField(r.integers(-16, 17, (2, 2, 2)))
    w = r.normal(size=(32, 32))
    g = analytic(lambda t: d_warp(t, mv), np.zeros((32, 32)), w)
    # every output sample is a convex combination of sources, edge clamping included
    assert g.sum() == pytest.approx(w.sum(), abs=1e-10)


def test_deblock_gradient_matches_fd():
    r = np.random.default_rng(4)
    x = r.random((32, 32))
    wts = r.normal(size=(32, 32))
    mask = BoundaryMask(r.random((4, 3)) < 0.6, r.random((3, 4)) < 0.6)
    g = analytic(lambda t: d_deblock(t, mask), x, wts)
    coords = sample_coords(r, x.shape, 64)
    num = fd_grad(lambda v: float(np.sum(wts * d_deblock(GradientTape().watch(v), mask).values)), x, coords)
    assert rel_err(np.array([g[c] for c in coords]), num).max() < 1e-6


def test_deblock_clear_mask_identity_gradient():
    w = np.random.default_rng(2).normal(size=(16, 16))
    np.testing.assert_array_equal(analytic(lambda t: d_deblock(t, BoundaryMask.clear(16, 16)), np.zeros((16, 16)), w), w)


def test_deblock_constant_gradient_mass():
    # filter rows sum to one, so constants pass the forward map unchanged and the
    # adjoint preserves total gradient mass; individual columns need not sum to one
    mask = BoundaryMask(np.ones((2, 1), bool), np.ones((1, 2), bool))
    g = analytic(lambda t: d_deblock(t, mask), np.zeros((16, 16)), np.ones((16, 16)))
    assert g.sum() == pytest.approx(256.0)
    assert g[0, 6] == pytest.approx(1.25)


def test_add_residual_identity_gradient():
    r = np.random.default_rng(6)
    w = r.normal(size=(8, 8))
    res = r.normal(size=(8, 8))
    g = analytic(lambda t: d_add_residual(t, res), r.random((8, 8)), w)
    np.testing.assert_array_equal(g, w)
    x = r.random((8, 8))
    coords = sample_coords(r, x.shape, 10)
    num = fd_grad(lambda v: float(np.sum(w * (v + res))), x, coords)
    assert rel_err(np.array([g[c] for c in coords]), num).max() < 1e-8


def test_clip_gradient_masks_saturated():
    x = np.array([[-0.5, 0.2], [0.7, 1.4]])
    g = analytic(lambda t: d_clip(t, 0.0, 1.0), x, np.ones((2, 2)))
    np.testing.assert_array_equal(g, [[0, 1], [1, 0]])
    g = analytic(lambda t: d_clip(t, 0.0, 1.0), np.full((2, 2), 3.0), np.ones((2, 2)))
    assert not g.any()


def test_round8_is_straight_through():
    x = np.array([[0.1234, 0.5]])
    tape = GradientTape()
    xt = tape.watch(x)
    y = d_round8(xt)
    np.testing.assert_array_equal(y.values * 255, np.round(x * 255))
    tape.backward(y, seed=np.array([[2.0, 3.0]]))
    np.testing.assert_array_equal(xt.grad, [[2.0, 3.0]])


def test_gop_loss_values():
    tape = GradientTape()
    a = tape.watch(np.zeros((2, 2)))
    b = tape.watch(np.ones((2, 2)))
    targets = [np.full((2, 2), 0.5), np.zeros((2, 2))]
    loss = gop_loss([a, b], targets, [2.0, 0.5])
    assert loss.item() == pytest.approx(2 * 0.25 + 0.5 * 1.0)
    tape.backward(loss)
    np.testing.assert_allclose(a.grad, 2 * 2 * (0 - 0.5) / 4)
    zero = gop_loss([a, b], targets, [0.0, 0.0])
    assert zero.item() == 0.0
    with pytest.raises(StructureError):
        gop_loss([a], targets)


def _coded(kind="translate", qp=20, n=6, b=False, seed=1, size=32):
    cfg = CodecConfig(b_frames_enabled=b)
    gop = list(synth_sequence(kind, size, size, n, seed=seed))
    return gop, encode_gop(gop, gop[0], qp, cfg, keep_i_unit=False), cfg


@pytest.mark.parametrize("b", [False, True])
@pytest.mark.parametrize("kind", ["translate", "checker-pan", "noise", "rotate-gradient"])
def test_forward_matches_integer_decoder(kind, b):
    gop, coded, cfg = _coded(kind, qp=24, b=b)
    ref = gop[0]
    ints = decode_gop(coded, ref, cfg)
    tape = GradientTape()
    outs = reconstruct_gop_diff(tape.watch(ref.data), coded, cfg)
    for o, f in zip(outs, ints):
        assert np.abs(o.values - f.data).max() <= 0.5 / 255 + 1e-12


def test_static_lossless_reproduces_source():
    f = synth_sequence("translate", 32, 32, 1)[0]
    cfg = CodecConfig()
    coded = encode_gop([f] * 3, f, 0, cfg, keep_i_unit=False)
    outs = reconstruct_gop_diff(GradientTape().watch(f.data), coded, cfg)
    for o in outs:
        np.testing.assert_allclose(o.values, f.data, atol=1e-12)


def test_chain_gradient_matches_fd():
    gop, coded, cfg = _coded("translate", qp=20, n=5, seed=2)
    x0 = gop[0].data * 0.9 + 0.05

    def total(v, tape=None):
        tape = GradientTape() if tape is None else tape
        xt = tape.watch(v)
        outs = reconstruct_gop_diff(xt, coded, cfg, ste_rounding=False)
        return xt, outs

    tape = GradientTape()
    xt, outs = total(x0, tape)
    loss = gop_loss(outs, [np.zeros_like(x0)] * len(outs), [0.0] * len(outs))
    root = outs[0]
    for o in outs[1:]:
        root = tape.record("acc", (root, o), root.values + o.values, lambda g: (g, g))
    tape.backward(root)
    r = np.random.default_rng(9)
    coords = sample_coords(r, x0.shape, 64)
    num = fd_grad(lambda v: float(sum(o.values.sum() for o in total(v)[1])), x0, coords)
    good = rel_err(np.array([xt.grad[c] for c in coords]), num) < 1e-2
    assert good.mean() >= 0.95
    assert loss.item() == 0.0


def test_superposition_without_clipping():
    f = Frame(np.full((32, 32), 0.5))
    cfg = CodecConfig()
    gop = [f] * 4
    coded = encode_gop(gop, f, 0, cfg, keep_i_unit=False)
    r = np.random.default_rng(0)
    a, b = 0.5 + 0.1 * r.random((32, 32)), 0.5 + 0.1 * r.random((32, 32))

    def run(x):
        return [o.values for o in reconstruct_gop_diff(GradientTape().watch(x), coded, cfg, ste_rounding=False)]

    mix = run(0.3 * a + 0.7 * b)
    for m, ra, rb in zip(mix, run(a), run(b)):
        np.testing.assert_allclose(m, 0.3 * ra + 0.7 * rb, atol=1e-9)


def test_tape_is_deterministic():
    gop, coded, cfg = _coded(n=4)

    def grad():
        tape = GradientTape()
        xt = tape.watch(gop[0].data)
        outs = reconstruct_gop_diff(xt, coded, cfg)
        tape.backward(gop_loss(outs, gop))
        return xt.grad

    np.testing.assert_array_equal(grad(), grad())


def test_structure_mismatch_detected():
    gop, coded, cfg = _coded(n=4)
    with pytest.raises(StructureError):
        reconstruct_gop_diff(GradientTape().watch(gop[0].data), coded, CodecConfig(b_frames_enabled=True))


@given(seed=st.integers(0, 500))
def test_forward_fidelity_property(seed):
    r = np.random.default_rng(seed)
    cfg = CodecConfig(b_frames_enabled=bool(seed % 2))
    gop = [Frame.from_pixels(r.integers(0, 256, (16, 16), dtype=np.uint8)) for _ in range(3)]
    ref = Frame(r.random((16, 16)))
    coded = encode_gop(gop, ref, int(r.integers(0, 52)), cfg, keep_i_unit=False)
    ints = decode_gop(coded, ref, cfg)
    outs = reconstruct_gop_diff(GradientTape().watch(ref.data), coded, cfg)
    assert max(np.abs(o.values - f.data).max() for o, f in zip(outs, ints)) <= 0.5 / 255 + 1e-12
