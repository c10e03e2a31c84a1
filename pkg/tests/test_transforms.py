import math

import numpy as np
import pytest

from carben import transforms
from carben.transforms import DEFAULT_BOUNDS, Kind, LinfDelta

from oracles import fd_jacobian_dot, fd_param_dot, rel_err

IDENTITY = {
    Kind.HUE: 0.0,
    Kind.SATURATION: 1.0,
    Kind.BRIGHTNESS: 0.0,
    Kind.CONTRAST: 1.0,
    Kind.ROTATION: 0.0,
}

TEST_PARAMS = {
    Kind.HUE: 0.4,
    Kind.SATURATION: 1.15,
    Kind.BRIGHTNESS: 0.08,
    Kind.CONTRAST: 1.12,
    Kind.ROTATION: 6.0,
}


def interior_image(seed, h=16, w=16):
    rng = np.random.default_rng(seed)
    return (rng.random((3, h, w)) * 0.7 + 0.15).astype(np.float32)


@pytest.mark.parametrize("kind", list(IDENTITY))
def test_identity_params_bit_equal(kind, rand_image):
    out = transforms.apply(kind, rand_image, IDENTITY[kind])
    assert np.array_equal(out, rand_image)


def test_linf_zero_delta_bit_equal(rand_image):
    d = LinfDelta(np.zeros_like(rand_image), 8 / 255)
    assert np.array_equal(transforms.apply_linf(rand_image, d), rand_image)


def test_hue_gray_fixed_point():
    x = np.full((3, 4, 4), 0.42, dtype=np.float32)
    assert np.allclose(transforms.apply_hue(x, 1.3), x, atol=1e-6)


def test_hue_inverse_rotation(rand_image):
    x = (rand_image * 0.4 + 0.3).astype(np.float32)  # keep chroma in gamut
    back = transforms.apply_hue(transforms.apply_hue(x, 0.7), -0.7)
    assert np.abs(back - x).max() < 1e-5


def test_hue_group_action_preclamp():
    x = (interior_image(5) * 0.3 + 0.35).astype(np.float32)
    a = transforms.apply_hue(transforms.apply_hue(x, 0.2), 0.3)
    b = transforms.apply_hue(x, 0.5)
    assert np.abs(a - b).max() < 1e-5


def test_hue_out_of_bounds():
    with pytest.raises(ValueError):
        transforms.apply_hue(np.full((3, 2, 2), 0.5, np.float32), 4.0)


def test_saturation_zero_gives_grayscale(rand_image):
    out = transforms.apply_saturation(rand_image, 0.0)
    assert np.allclose(out[0], out[1], atol=1e-6)
    assert np.allclose(out[1], out[2], atol=1e-6)


def test_saturation_gray_fixed_point():
    x = np.full((3, 3, 3), 0.6, dtype=np.float32)
    assert np.allclose(transforms.apply_saturation(x, 1.25), x, atol=1e-6)


def test_saturation_negative_rejected(rand_image):
    with pytest.raises(ValueError):
        transforms.apply_saturation(rand_image, -0.1)


def test_brightness_shift():
    x = np.full((3, 2, 2), 0.5, dtype=np.float32)
    assert np.allclose(transforms.apply_brightness(x, 0.2), 0.7, atol=1e-7)


def test_brightness_saturates():
    out = transforms.apply_brightness(interior_image(1), 1.0)
    assert np.all(out == 1.0)


def test_contrast_midgray_fixed():
    x = np.full((3, 2, 2), 0.5, dtype=np.float32)
    assert np.allclose(transforms.apply_contrast(x, 1.3), 0.5, atol=1e-7)


def test_contrast_zero_flattens(rand_image):
    assert np.allclose(transforms.apply_contrast(rand_image, 0.0), 0.5, atol=1e-7)


def test_rotation_center_pixel_fixed():
    x = np.full((3, 5, 5), 0.7, dtype=np.float32)
    out = transforms.apply_rotation(x, 180.0)
    assert out[0, 2, 2] == pytest.approx(0.7, abs=1e-6)


def test_rotation_two_warp_regression():
    # Frozen from the oracle run: white-noise images lose high frequencies
    # under a +-10 degree double warp, and the zero-fill border adds more.
    rng = np.random.default_rng(0)
    x = rng.random((3, 32, 32)).astype(np.float32)
    y = transforms.apply_rotation(transforms.apply_rotation(x, 10.0), -10.0)
    d = np.abs(y.astype(np.float64) - x)
    assert d.max() > 0
    assert d.mean() == pytest.approx(0.177992, abs=1e-4)


def test_rotation_two_warp_smooth_image_small():
    from carben import classifier

    x = classifier.synth_shapes(0, 1).images[0]
    y = transforms.apply_rotation(transforms.apply_rotation(x, 10.0), -10.0)
    assert np.abs(y.astype(np.float64) - x).mean() < 0.1


def test_linf_projection_bound(rand_image):
    eps = 8 / 255
    rng = np.random.default_rng(9)
    delta = (rng.uniform(-eps, eps, rand_image.shape)).astype(np.float32)
    out = transforms.apply_linf(rand_image, LinfDelta(delta, eps))
    assert np.abs(out - rand_image).max() <= eps + 1e-7


def test_linf_uniform_shift_on_midgray():
    eps = 8 / 255
    x = np.full((3, 2, 2), 0.5, dtype=np.float32)
    out = transforms.apply_linf(x, LinfDelta(np.full_like(x, eps), eps))
    assert np.allclose(out, 0.5 + eps, atol=1e-7)


def test_linf_delta_exceeding_epsilon_rejected(rand_image):
    with pytest.raises(ValueError):
        LinfDelta(np.full_like(rand_image, 0.1), 0.05)


def test_compose_empty_chain_identity(rand_image):
    assert np.array_equal(transforms.compose(rand_image, []), rand_image)


def test_compose_duplicate_kind_rejected(rand_image):
    with pytest.raises(ValueError):
        transforms.compose(rand_image, [(Kind.BRIGHTNESS, 0.1), (Kind.BRIGHTNESS, 0.1)])


def test_compose_all_identity_bit_equal(rand_image):
    chain = [(k, IDENTITY[k]) for k in IDENTITY]
    chain.insert(0, (Kind.LINF, LinfDelta(np.zeros_like(rand_image), 0.0)))
    assert np.array_equal(transforms.compose(rand_image, chain), rand_image)


def test_compose_order_sensitivity_exact():
    # (x + b - 0.5) c + 0.5 vs (x - 0.5) c + 0.5 + b differ by b(c-1) = 0.06.
    x = np.full((3, 4, 4), 0.6, dtype=np.float32)
    bc = transforms.compose(x, [(Kind.BRIGHTNESS, 0.2), (Kind.CONTRAST, 1.3)])
    cb = transforms.compose(x, [(Kind.CONTRAST, 1.3), (Kind.BRIGHTNESS, 0.2)])
    assert np.allclose(np.abs(bc - cb), 0.06, atol=1e-6)


def _kind_param(kind, rng):
    if kind is Kind.LINF:
        return None
    if kind is Kind.HUE:
        # small angle: large UV rotations clamp many pixels, and FD is not a
        # derivative oracle on pixels whose clamp state flips inside +-h
        return 0.3 * (1 if rng.random() > 0.5 else -1)
    b = DEFAULT_BOUNDS[kind]
    # interior of the bounds, away from identity
    return b.identity + 0.55 * (b.hi - b.identity) * (1 if rng.random() > 0.5 else -1)


def _kind_image(kind, seed):
    x = interior_image(seed)
    if kind is Kind.HUE:
        return (x * 0.4 + 0.3).astype(np.float32)  # keeps rotated chroma in gamut
    return x


@pytest.mark.parametrize("kind", list(Kind))
def test_vjp_dot_product_consistency(kind):
    failures = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        x = _kind_image(kind, seed)
        v = rng.standard_normal(x.shape)
        u = rng.standard_normal(x.shape)
        if kind is Kind.LINF:
            param = LinfDelta(rng.uniform(-0.01, 0.01, x.shape).astype(np.float32), 0.02)
        else:
            param = _kind_param(kind, rng)
        lhs = fd_jacobian_dot(kind, x, param, v, u)
        rhs = float((v * transforms.vjp_image(kind, x, param, u)).sum())
        if rel_err(lhs, rhs) > 1e-4:
            failures.append((seed, lhs, rhs))
    assert not failures, failures


@pytest.mark.parametrize("kind", list(IDENTITY))
def test_param_grad_matches_fd(kind):
    failures = []
    h = 0.1 if kind is Kind.ROTATION else 1e-3
    for seed in range(20):
        rng = np.random.default_rng(100 + seed)
        x = _kind_image(kind, 100 + seed)
        u = rng.standard_normal(x.shape)
        param = _kind_param(kind, rng)
        fd = fd_param_dot(kind, x, param, u, h=h)
        an = transforms.param_grad(kind, x, param, u)
        if rel_err(fd, an) > 1e-3:
            failures.append((seed, fd, an))
    assert not failures, failures


def test_param_grad_brightness_sum_of_ones():
    x = np.full((3, 2, 2), 0.5, dtype=np.float32)
    u = np.ones_like(x)
    assert transforms.param_grad(Kind.BRIGHTNESS, x, 0.0, u) == pytest.approx(12.0)


def test_param_grad_contrast_zero_on_midgray():
    x = np.full((3, 2, 2), 0.5, dtype=np.float32)
    u = np.ones_like(x)
    assert transforms.param_grad(Kind.CONTRAST, x, 1.0, u) == pytest.approx(0.0, abs=1e-9)


def test_param_grad_linf_rejected(rand_image):
    with pytest.raises(ValueError):
        transforms.param_grad(Kind.LINF, rand_image, LinfDelta(np.zeros_like(rand_image), 0.1), rand_image)


def test_vjp_brightness_passthrough(rand_image):
    u = np.ones_like(rand_image)
    assert np.array_equal(transforms.vjp_image(Kind.BRIGHTNESS, rand_image, 0.05, u), u)


def test_vjp_contrast_scales():
    x = (interior_image(2) * 0.5 + 0.25).astype(np.float32)  # stays interior at c=1.3
    u = np.ones_like(x)
    out = transforms.vjp_image(Kind.CONTRAST, x, 1.3, u)
    assert np.allclose(out, 1.3, atol=1e-6)


def test_vjp_shape_mismatch_rejected(rand_image):
    with pytest.raises(ValueError):
        transforms.vjp_image(Kind.BRIGHTNESS, rand_image, 0.0, np.ones((3, 2, 2), np.float32))


def test_canonical_ordering():
    assert transforms.CANONICAL_ORDER == (
        Kind.LINF,
        Kind.HUE,
        Kind.SATURATION,
        Kind.BRIGHTNESS,
        Kind.CONTRAST,
        Kind.ROTATION,
    )


def test_output_range_and_shape_preserved(rand_image):
    for kind, p in TEST_PARAMS.items():
        out = transforms.apply(kind, rand_image, p)
        assert out.shape == rand_image.shape
        assert out.min() >= 0.0 and out.max() <= 1.0
