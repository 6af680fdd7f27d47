import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from pmdg.data import MiniBatch, Normalizer
from pmdg.errors import ConfigError, DataError, LevelError
from pmdg.transforms import (
    REGISTRY,
    TRANSFORM_NAMES,
    apply_set,
    make_transform_set,
)
from pmdg.transforms.augmix import (
    augmix_image,
    augmix_lite_transform,
    ipmix_mix,
    mixing_mask,
    texture_pool,
)
from pmdg.transforms.mixing import (
    cutmix_apply,
    cutmix_transform,
    derangement,
    mixup_transform,
    org_transform,
)
from pmdg.transforms.pixel import apply_op, pixel_policy_transform, posterize, rotate
from pmdg.transforms.randconv import rand_conv_transform, random_conv
from pmdg.transforms.style import edge_transform, restyle, sobel_magnitude, style_stats_transform

NORM = Normalizer()


def batch(b=4, h=8, seed=0, classes=3):
    g = torch.Generator().manual_seed(seed)
    raw = torch.rand(b, 3, h, h, generator=g)
    labels = torch.arange(b) % classes
    return MiniBatch(NORM.normalize(raw), labels, "src")


# --- registry / apply_set ---------------------------------------------------

def test_registry_names_exact():
    assert set(REGISTRY) == set(TRANSFORM_NAMES)
    assert TRANSFORM_NAMES == ("org", "mixup", "cutmix", "rand_conv", "augmix_lite", "ipmix_lite",
                               "randaugment_lite", "trivialaugment_lite", "edge", "style_stats")


def test_make_set_with_duplicates():
    ts = make_transform_set(["org", "ipmix_lite", "ipmix_lite"], seed=0)
    assert ts.K == 3 and ts.names == ["org", "ipmix_lite", "ipmix_lite"]
    assert ts.ops[1].seed != ts.ops[2].seed
    ts5 = make_transform_set(["org", "style_stats", "edge", "ipmix_lite", "ipmix_lite"], seed=0)
    assert ts5.K == 5


def test_make_set_errors():
    with pytest.raises(ConfigError, match="empty transform set"):
        make_transform_set([], 0)
    with pytest.raises(ConfigError, match="registered") as e:
        make_transform_set(["org", "nope"], 0)
    assert "rand_conv" in str(e.value)


def test_apply_set_org_is_bit_identical():
    b = batch()
    (out,) = apply_set(make_transform_set(["org"], 0), b)
    assert torch.equal(out.images, b.images) and torch.equal(out.labels, b.labels)
    assert out.domain_tag == "pseudo:org:0"


def test_apply_set_rand_conv_pair_differs():
    b = batch()
    outs = apply_set(make_transform_set(["org", "rand_conv", "rand_conv"], 1), b)
    assert len(outs) == 3
    assert all(o.images.shape == (4, 3, 8, 8) for o in outs)
    assert not torch.equal(outs[1].images, outs[2].images)
    assert [o.domain_tag for o in outs] == ["pseudo:org:0", "pseudo:rand_conv:1", "pseudo:rand_conv:2"]


def test_fresh_draw_per_call():
    ts = make_transform_set(["rand_conv"], 3)
    b = batch()
    a1 = apply_set(ts, b)[0].images
    a2 = apply_set(ts, b)[0].images
    assert not torch.equal(a1, a2)


@pytest.mark.parametrize("name", TRANSFORM_NAMES)
def test_contracts_for_every_transform(name):
    b = batch(b=6, h=16, seed=2)
    make = lambda: make_transform_set([name], 11, num_classes=3)
    out1 = apply_set(make(), b)[0]
    out2 = apply_set(make(), b)[0]
    # shape, finiteness, determinism
    assert out1.images.shape == b.images.shape
    assert torch.isfinite(out1.images).all()
    assert torch.equal(out1.images, out2.images)
    # label contract
    if name in ("mixup", "cutmix"):
        assert out1.soft
        assert torch.allclose(out1.labels.sum(1), torch.ones(6, dtype=out1.labels.dtype), atol=1e-6)
        assert (out1.labels >= 0).all()
    else:
        assert torch.equal(out1.labels, b.labels)
    # both levels exist; the unused one is the identity
    op = make().ops[0]
    raw = list(NORM.denormalize(b.images))
    if op.level == "batch":
        assert all(torch.equal(x, y) for x, y in zip(op.apply_raw(raw), raw))
    else:
        assert op.apply_batch(b) is b


@pytest.mark.parametrize("k", [1, 2, 5, 8])
def test_apply_set_cardinality(k):
    names = [TRANSFORM_NAMES[i % len(TRANSFORM_NAMES)] for i in range(k)]
    assert len(apply_set(make_transform_set(names, 0, num_classes=3), batch())) == k


# --- org --------------------------------------------------------------------

def test_org_identity():
    b = batch()
    assert org_transform(org_transform(b)) is b
    raw = [torch.rand(3, 4, 4)]
    assert REGISTRY["org"]().apply_raw(raw)[0] is raw[0]


# --- mixup / cutmix ---------------------------------------------------------

@settings(max_examples=25, deadline=None)
@given(b=st.integers(2, 20), seed=st.integers(0, 1000))
def test_derangement_has_no_fixed_points(b, seed):
    pi = derangement(b, np.random.default_rng(seed))
    assert sorted(pi.tolist()) == list(range(b))
    assert (pi != np.arange(b)).all()


def test_mixup_endpoints_and_arithmetic():
    rng = np.random.default_rng(0)
    b = batch()
    out = mixup_transform(b, 1.0, rng, num_classes=3, lam=1.0)
    assert torch.equal(out.images, b.images)
    assert torch.equal(out.labels, b.soft_labels(3))

    zeros_ones = MiniBatch(torch.stack([torch.zeros(3, 2, 2), torch.ones(3, 2, 2)]),
                           torch.tensor([0, 1]), "s")
    half = mixup_transform(zeros_ones, 1.0, rng, num_classes=2, lam=0.5)
    assert torch.allclose(half.images, torch.full_like(half.images, 0.5))
    assert torch.allclose(half.labels, torch.full((2, 2), 0.5))

    x0, x1 = torch.rand(3, 2, 2), torch.rand(3, 2, 2)
    two = MiniBatch(torch.stack([x0, x1]), torch.tensor([0, 1]), "s")
    out = mixup_transform(two, 1.0, rng, num_classes=2, lam=0.3)
    assert torch.allclose(out.images[0], 0.3 * x0 + 0.7 * x1)
    assert torch.allclose(out.images[1], 0.3 * x1 + 0.7 * x0)
    assert torch.allclose(out.labels[0], torch.tensor([0.3, 0.7]))


def test_mixup_errors():
    rng = np.random.default_rng(0)
    with pytest.raises(DataError):
        mixup_transform(batch(b=1), 1.0, rng, num_classes=3)
    with pytest.raises(ConfigError):
        mixup_transform(batch(), 0.0, rng, num_classes=3)


def test_cutmix_area_lambda():
    imgs = torch.stack([torch.zeros(3, 4, 4), torch.ones(3, 4, 4)])
    b = MiniBatch(imgs, torch.tensor([0, 1]), "s")
    partner = np.array([1, 0])
    out, lam = cutmix_apply(b, (0, 2, 0, 2), partner, num_classes=2)
    assert lam == 0.75
    assert torch.allclose(out.labels[0], torch.tensor([0.75, 0.25], dtype=out.labels.dtype))
    assert out.images[0, :, :2, :2].eq(1).all() and out.images[0, :, 2:, :].eq(0).all()
    full, lam = cutmix_apply(b, (0, 4, 0, 4), partner, num_classes=2)
    assert lam == 0.0
    assert torch.equal(full.images[0], imgs[1])
    assert torch.allclose(full.labels[0], torch.tensor([0.0, 1.0], dtype=full.labels.dtype))


def test_cutmix_lambda_one_is_identity():
    b = batch()
    out = cutmix_transform(b, 1.0, np.random.default_rng(0), num_classes=3, lam=1.0)
    assert torch.equal(out.images, b.images)
    assert torch.equal(out.labels, b.soft_labels(3))


def test_cutmix_errors():
    with pytest.raises(DataError):
        cutmix_transform(batch(b=1), 1.0, np.random.default_rng(0), num_classes=3)


# --- rand_conv --------------------------------------------------------------

def test_rand_conv_identity_kernel():
    b = batch()
    w = torch.eye(3).view(3, 3, 1, 1)
    out = random_conv(b.images, w)
    assert torch.allclose(out, b.images, atol=1e-6)


def test_rand_conv_determinism():
    b = batch()
    o1 = rand_conv_transform(b, [1, 3], 0.5, np.random.default_rng(4))
    o2 = rand_conv_transform(b, [1, 3], 0.5, np.random.default_rng(4))
    assert torch.equal(o1.images, o2.images)


def test_rand_conv_constant_image_guard():
    b = MiniBatch(torch.zeros(2, 3, 6, 6), torch.tensor([0, 1]), "s")
    out = rand_conv_transform(b, [3], 0.0, np.random.default_rng(0))
    assert torch.isfinite(out.images).all()
    assert torch.allclose(out.images, torch.zeros_like(out.images))


def test_rand_conv_matches_input_stats():
    b = batch(b=8, h=16)
    out = rand_conv_transform(b, [3], 0.0, np.random.default_rng(1)).images
    dims = (0, 2, 3)
    assert torch.allclose(out.mean(dims), b.images.mean(dims), atol=1e-5)
    assert torch.allclose(out.std(dims), b.images.std(dims), atol=1e-5)


def test_rand_conv_even_kernel():
    with pytest.raises(ConfigError, match="odd"):
        rand_conv_transform(batch(), [2], 0.5, np.random.default_rng(0))


def test_rand_conv_weight_variance(monkeypatch):
    import pmdg.transforms.randconv as rc
    seen = []
    real = rc.random_conv
    monkeypatch.setattr(rc, "random_conv", lambda x, w, mix=None: seen.append(w) or real(x, w, mix))
    rng = np.random.default_rng(0)
    b = batch()
    for _ in range(400):
        rand_conv_transform(b, [1, 3], 0.0, rng)
    for k in (1, 3):
        ws = torch.cat([w.flatten() for w in seen if w.shape[-1] == k]).numpy()
        assert abs(ws.var() / (1 / (k * k * 3)) - 1) < 0.1


# --- augmix / ipmix ---------------------------------------------------------

def test_augmix_endpoints():
    img = torch.rand(3, 8, 8)
    chain = [lambda x: 1 - x]
    assert torch.equal(augmix_image(img, [chain], np.array([1.0]), 1.0), img)
    ident = [lambda x: x]
    for m in (0.0, 0.4, 1.0):
        assert torch.allclose(augmix_image(img, [ident], np.array([1.0]), m), img)


def test_augmix_dirichlet_simplex():
    rng = np.random.default_rng(0)
    for _ in range(50):
        w = rng.dirichlet([1.0] * 3)
        assert abs(w.sum() - 1) < 1e-12 and (w >= 0).all()


def test_augmix_param_errors():
    rng = np.random.default_rng(0)
    for kw in ({"severity": 0}, {"severity": 11}, {"width": 0}, {"depth": 0}):
        with pytest.raises(ConfigError):
            augmix_lite_transform(batch(), rng, NORM, **kw)


def test_ipmix_endpoints():
    img, tex = torch.rand(3, 8, 8), torch.rand(3, 8, 8)
    rng = np.random.default_rng(0)
    for blend in ("add", "mul"):
        mask = mixing_mask("patch", 8, 8, rng)
        assert torch.equal(ipmix_mix(img, tex, mask, 0.0, blend), img)
        assert torch.allclose(ipmix_mix(img, tex, torch.ones(1, 8, 8), 1.0, blend), tex)


def test_ipmix_pool_determinism_and_errors():
    assert torch.equal(texture_pool(4, 16, 3), texture_pool(4, 16, 3))
    assert not torch.equal(texture_pool(4, 16, 3), texture_pool(4, 16, 4))
    op = REGISTRY["ipmix_lite"](seed=0, mixing_set_size=0)
    with pytest.raises(ConfigError):
        op(batch())


def test_mixing_mask_granularities():
    rng = np.random.default_rng(0)
    patch = mixing_mask("patch", 8, 8, rng)
    blocks = patch[0].reshape(2, 4, 2, 4)
    assert (blocks.amin((1, 3)) == blocks.amax((1, 3))).all()
    assert mixing_mask("image", 8, 8, rng).eq(1).all()


# --- pixel policies ---------------------------------------------------------

def test_pixel_policy_identity_and_level_contract():
    raw = [torch.rand(3, 8, 8) for _ in range(2)]
    out = pixel_policy_transform(raw, "randaugment", 0, 9, np.random.default_rng(0))
    assert all(torch.equal(a, b) for a, b in zip(out, raw))
    with pytest.raises(LevelError):
        pixel_policy_transform([x * 2 - 1.5 for x in raw], "randaugment", 1, 9,
                               np.random.default_rng(0))
    with pytest.raises(LevelError):
        pixel_policy_transform(batch(), "randaugment", 1, 9, np.random.default_rng(0))


def test_rotate_zero_is_identity():
    img = torch.rand(3, 8, 8)
    assert torch.allclose(rotate(img, degrees=0.0), img, atol=1e-6)


def test_posterize_one_bit():
    img = torch.full((3, 4, 4), 0.5)
    out = posterize(img, 1)
    assert torch.allclose(out, torch.full_like(out, 128 / 255))
    dark = posterize(torch.full((3, 2, 2), 0.3), 1)
    assert dark.eq(0).all()


@pytest.mark.parametrize("name", ["identity", "autocontrast", "equalize", "posterize", "solarize",
                                  "brightness", "contrast", "saturation", "rotate", "shear_x",
                                  "shear_y", "translate_x", "translate_y"])
def test_pixel_ops_stay_in_range(name):
    img = torch.rand(3, 8, 8)
    out = apply_op(img, name, 1.0, np.random.default_rng(0))
    assert out.shape == img.shape
    assert out.min() >= 0 and out.max() <= 1


# --- edge / style -----------------------------------------------------------

def test_edge_constant_image_is_white():
    b = MiniBatch(NORM.normalize(torch.full((1, 3, 6, 6), 0.4)), torch.tensor([0]), "s")
    raw = NORM.denormalize(edge_transform(b).images)
    assert torch.allclose(raw, torch.ones_like(raw))


def test_edge_vertical_step_support():
    gray = torch.zeros(1, 1, 6, 6)
    gray[..., 3:] = 1.0
    mag = sobel_magnitude(gray)[0, 0]
    cols = mag.abs().sum(0)
    assert set(torch.nonzero(cols).flatten().tolist()) == {2, 3}


def test_sobel_hand_fixture():
    g = torch.tensor([[0.0, 0, 0, 0], [0, 1, 2, 0], [0, 3, 4, 0], [0, 0, 0, 0]])
    padded = np.pad(g.numpy(), 1, mode="edge")
    kx = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]])
    expect = np.zeros((4, 4))
    for i in range(4):
        for j in range(4):
            win = padded[i:i + 3, j:j + 3]
            expect[i, j] = np.hypot((win * kx).sum(), (win * kx.T).sum())
    got = sobel_magnitude(g[None, None])[0, 0].numpy()
    np.testing.assert_allclose(got, expect, atol=1e-6)


def test_edge_output_dark_strokes():
    raw = torch.zeros(1, 3, 6, 6)
    raw[..., 3:] = 1.0
    out = NORM.denormalize(edge_transform(MiniBatch(NORM.normalize(raw), torch.tensor([0]), "s")).images)
    assert out[0, 0, 0, 0] == 1.0 and out[0, 0, 0, 2] == 0.0
    assert torch.equal(out[:, 0], out[:, 1])


def test_style_stats_self_partner_identity():
    b = batch()
    out = style_stats_transform(b, np.random.default_rng(0), partner=np.arange(4))
    assert torch.allclose(out.images, b.images, atol=1e-5)


def test_restyle_moments():
    g = torch.Generator().manual_seed(0)
    content = torch.randn(1, 1, 16, 16, generator=g, dtype=torch.float64)
    content = (content - content.mean()) / content.std(unbiased=False)
    style = 0.3 + 0.5 * content.flip(-1).roll(3, -2)
    out = restyle(content, style)
    assert abs(out.mean().item() - 0.3) < 1e-9
    assert abs(out.std(unbiased=False).item() - 0.5) < 1e-5


def test_restyle_constant_channel():
    content = torch.full((1, 1, 4, 4), 2.0)
    style = torch.rand(1, 1, 4, 4)
    out = restyle(content, style)
    assert torch.allclose(out, torch.full_like(out, style.mean().item()))


def test_style_stats_partner_never_self_and_error():
    b = batch(b=5)
    out = style_stats_transform(b, np.random.default_rng(0))
    assert torch.isfinite(out.images).all()
    with pytest.raises(DataError):
        style_stats_transform(batch(b=1), np.random.default_rng(0))
