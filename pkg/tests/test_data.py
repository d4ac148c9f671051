import numpy as np
import pytest
from PIL import Image

from rlnet.data import (RainParams, augment, downscale, load_pairs, load_sample, make_sample,
                        procedural_clean, save_sample, synthesize_rain, synthetic_dataset, write_image)
from rlnet.errors import ConfigError, InputError


def clean_image(seed=0, size=64):
    return procedural_clean(size, np.random.default_rng(seed))


def check_sample(s):
    assert np.array_equal(s.residual, np.clip(s.rainy - s.clean, 0, 1))
    h, w = s.rainy.shape[:2]
    assert s.rainy_half.shape == (h // 2, w // 2, 3)
    assert s.residual_half.shape == (h // 2, w // 2, 3)
    assert s.residual_quarter.shape == (h // 4, w // 4, 3)
    np.testing.assert_array_equal(s.residual_half, downscale(s.residual, 0.5))
    np.testing.assert_array_equal(s.residual_quarter, downscale(s.residual, 0.25))
    for a in (s.rainy, s.clean, s.residual):
        assert a.dtype == np.float32 and a.min() >= 0 and a.max() <= 1


def test_no_streaks_means_no_rain():
    c = clean_image()
    s = synthesize_rain(c, RainParams(streak_count=0))
    assert np.array_equal(s.rainy, c)
    assert not s.residual.any()


def test_synthesis_is_deterministic():
    c = clean_image()
    a = synthesize_rain(c, RainParams(seed=3))
    b = synthesize_rain(c, RainParams(seed=3))
    assert np.array_equal(a.rainy, b.rainy)
    assert not np.array_equal(a.rainy, synthesize_rain(c, RainParams(seed=4)).rainy)
    d1, d2 = synthetic_dataset(3, 32, seed=7), synthetic_dataset(3, 32, seed=7)
    assert all(np.array_equal(x.rainy, y.rainy) for x, y in zip(d1, d2))
    assert [s.name for s in d1] == ["0000", "0001", "0002"]


def test_residual_is_positive_and_sparse():
    fractions = []
    for seed in range(20):
        s = synthesize_rain(clean_image(seed), RainParams(seed=seed))
        assert s.residual.mean() > 0
        fractions.append((s.residual < 0.02).mean())
    assert min(fractions) >= 0.70


@pytest.mark.parametrize("bad", [dict(streak_count=-1), dict(length_px=(5, 2)), dict(intensity=(0.2, 1.5)),
                                 dict(width_px=(0.0, 1.0))])
def test_rain_params_validation(bad):
    with pytest.raises(ConfigError):
        RainParams(**bad)


def test_downscale_examples():
    c = np.full((8, 8, 3), 0.3, np.float32)
    assert np.allclose(downscale(c, 0.5), 0.3) and np.allclose(downscale(c, 0.25), 0.3)
    block = np.array([[0, 0], [1, 1]], np.float32)[..., None]
    assert downscale(block, 0.5).item() == 0.5
    x = np.random.default_rng(0).random((16, 12, 3)).astype(np.float32)
    assert np.array_equal(downscale(x, 0.25), downscale(downscale(x, 0.5), 0.5))
    with pytest.raises(InputError):
        downscale(np.zeros((6, 8, 3), np.float32), 0.25)
    with pytest.raises(ConfigError):
        downscale(x, 0.3)


def test_augment_flip_is_an_involution():
    s = synthetic_dataset(1, 32, seed=1)[0]
    twice = augment(augment(s, 0, flip=True), 0, flip=True)
    for k in ("rainy", "clean", "residual", "residual_half"):
        assert np.array_equal(getattr(twice, k), getattr(s, k))
    once = augment(s, 0, flip=True)
    assert np.array_equal(once.residual, s.residual[:, ::-1])


def test_augment_resize_and_invariants_over_seeds():
    base = synthetic_dataset(2, 48, seed=2)
    flips = []
    for seed in range(100):
        s = augment(base[seed % 2], seed, size=64)
        check_sample(s)
        assert s.residual_half.shape == (32, 32, 3)
        flips.append(np.array_equal(s.rainy, augment(base[seed % 2], seed, size=64, flip=False).rainy))
    assert 20 < sum(flips) < 80
    for s in base:
        check_sample(s)


def test_make_sample_rejects_mismatch():
    with pytest.raises(InputError):
        make_sample(np.zeros((8, 8, 3)), np.zeros((8, 4, 3)))


def _write_pair(root, name, rainy, clean):
    (root / "rainy").mkdir(exist_ok=True)
    (root / "clean").mkdir(exist_ok=True)
    write_image(root / "rainy" / name, rainy)
    write_image(root / "clean" / name, clean)


def test_load_pairs_cases(tmp_path):
    (tmp_path / "rainy").mkdir()
    (tmp_path / "clean").mkdir()
    assert load_pairs(tmp_path / "rainy", tmp_path / "clean") == []
    s = synthetic_dataset(2, 32, seed=0)
    _write_pair(tmp_path, "b.png", s[1].rainy, s[1].clean)
    _write_pair(tmp_path, "a.png", s[0].rainy, s[0].clean)
    pairs = load_pairs(tmp_path / "rainy", tmp_path / "clean")
    assert [p.name for p in pairs] == ["a.png", "b.png"]
    check_sample(pairs[0])
    np.testing.assert_allclose(pairs[0].rainy, s[0].rainy, atol=0.5 / 255 + 1e-6)


def test_load_pairs_rejects_unmatched_and_mismatched(tmp_path):
    s = synthetic_dataset(1, 32, seed=0)[0]
    _write_pair(tmp_path, "a.png", s.rainy, s.clean)
    write_image(tmp_path / "rainy" / "extra.png", s.rainy)
    with pytest.raises(InputError, match="extra.png"):
        load_pairs(tmp_path / "rainy", tmp_path / "clean")
    (tmp_path / "rainy" / "extra.png").unlink()
    write_image(tmp_path / "rainy" / "a.png", np.zeros((16, 32, 3)))
    with pytest.raises(InputError, match="a.png"):
        load_pairs(tmp_path / "rainy", tmp_path / "clean")


def test_load_pairs_skips_a_few_undecodable_files(tmp_path):
    data = synthetic_dataset(10, 16, seed=0)
    for s in data:
        _write_pair(tmp_path, f"{s.name}.png", s.rainy, s.clean)
    (tmp_path / "rainy" / "0003.png").write_bytes(b"not an image")
    with pytest.warns(UserWarning, match="0003"):
        pairs = load_pairs(tmp_path / "rainy", tmp_path / "clean")
    assert len(pairs) == 9
    (tmp_path / "rainy" / "0004.png").write_bytes(b"garbage")
    with pytest.warns(UserWarning), pytest.raises(InputError, match="undecodable"):
        load_pairs(tmp_path / "rainy", tmp_path / "clean")


def test_load_pairs_crops_to_multiple_of_four(tmp_path):
    img = np.random.default_rng(0).random((30, 34, 3))
    _write_pair(tmp_path, "x.png", img, img * 0.5)
    (s,) = load_pairs(tmp_path / "rainy", tmp_path / "clean")
    assert s.rainy.shape == (28, 32, 3)


def test_sample_fixture_roundtrip(tmp_path):
    s = synthetic_dataset(1, 32, seed=5)[0]
    d = save_sample(s, tmp_path / "s0")
    assert sorted(p.name for p in d.iterdir()) == ["clean.png", "rainy.png", "residual.png"]
    back = load_sample(d)
    check_sample(back)
    np.testing.assert_allclose(back.clean, s.clean, atol=0.5 / 255 + 1e-6)
    with Image.open(d / "rainy.png") as im:
        assert im.mode == "RGB" and im.size == (32, 32)
