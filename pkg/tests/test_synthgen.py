import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from radiusnet.synthgen import (
    ConfigError,
    Dataset,
    GenConfig,
    Sample,
    SignalParams,
    blur_matrix,
    clean_dataset,
    degrade,
    disk_mask,
    expected_positive_fraction,
    gaussian_kernel,
    gen_clean,
    gen_dataset,
    gen_disk_clean,
    gen_pulse_clean,
    generate_sample,
    load_dataset,
    make_rng,
    pulse_mask,
    sample_params,
    save_dataset,
)


def _far_from_grid(r, D):
    """True if no pixel centre sits within 1e-9 of the boundary at distance r."""
    d = np.abs(np.arange(D) / (D - 1) - 0.5)
    return np.min(np.abs(d - r)) > 1e-9


@given(st.floats(0.01, 0.49), st.integers(8, 300))
def test_pulse_mask_matches_pointwise_test(r, D):
    if not _far_from_grid(r, D):
        return
    expected = np.array([abs(i / (D - 1) - 0.5) <= r for i in range(D)])
    np.testing.assert_array_equal(pulse_mask(r, D), expected)


@given(st.floats(0.01, 0.49), st.integers(8, 64))
@settings(max_examples=50)
def test_disk_mask_matches_pointwise_test(r, D):
    xs = np.arange(D) / (D - 1) - 0.5
    dist = np.sqrt(xs[:, None] ** 2 + xs[None, :] ** 2)
    if np.min(np.abs(dist - r)) < 1e-9:
        return
    np.testing.assert_array_equal(disk_mask(r, D), dist <= r)


@pytest.mark.parametrize("D", [16, 31, 32, 257])
def test_masks_are_mirror_symmetric(D):
    for r in np.linspace(0.05, 0.45, 17):
        m = pulse_mask(r, D)
        assert np.array_equal(m, m[::-1])
        d = disk_mask(r, D)
        assert np.array_equal(d, d.T) and np.array_equal(d, d[::-1]) and np.array_equal(d, d[:, ::-1])


def test_clean_signals_take_two_values():
    p = SignalParams(0.3, 0.2, 0.7)
    s1 = gen_pulse_clean(p, 32)
    s2 = gen_disk_clean(p, 32)
    assert set(np.unique(s1.data)) == {0.2, 0.7}
    assert set(np.unique(s2.data)) == {0.2, 0.7}
    assert s1.data[16] == 0.7 and s1.data[0] == 0.2
    assert s2.data.shape == (32, 32) and s1.label_r == 0.3


def test_params_properties():
    p = SignalParams(0.2, 0.8, 0.3)
    assert p.polarity == -1 and math.isclose(p.contrast, -0.5)
    q = p.flipped()
    assert (q.b, q.f, q.r) == (0.3, 0.8, 0.2) and q.polarity == 1


def test_kernel_normalised_and_truncated():
    w = gaussian_kernel(1 / 32, 32)
    assert math.isclose(w.sum(), 1.0)
    assert len(w) == 2 * math.ceil(3 * 31 / 32) + 1
    np.testing.assert_allclose(w, w[::-1])
    assert np.array_equal(gaussian_kernel(0.0, 32), [1.0])


@pytest.mark.parametrize("sigma_g,D", [(1 / 32, 32), (0.02, 64), (0.1, 16)])
def test_blur_matches_loop_oracle(sigma_g, D):
    rng = np.random.default_rng(0)
    x = rng.uniform(size=D)
    s_px = sigma_g * (D - 1)
    K = math.ceil(3 * s_px)
    expected = np.empty(D)
    for i in range(D):
        num = den = 0.0
        for j in range(max(0, i - K), min(D, i + K + 1)):
            w = math.exp(-0.5 * ((j - i) / s_px) ** 2)
            num += w * x[j]
            den += w
        expected[i] = num / den
    np.testing.assert_allclose(blur_matrix(sigma_g, D) @ x, expected, rtol=1e-12)
    img = rng.uniform(size=(D, D))
    rows = np.stack([blur_matrix(sigma_g, D) @ row for row in img])
    both = np.stack([blur_matrix(sigma_g, D) @ col for col in rows.T]).T
    out = degrade(Sample(img, 0.2, SignalParams(0.2, 0, 1)), sigma_g, 0.0)
    np.testing.assert_allclose(out.data, both, rtol=1e-12)


def test_blur_matrix_is_read_only():
    G = blur_matrix(1 / 32, 32)
    with pytest.raises(ValueError):
        G[0, 0] = 1.0


def test_blur_preserves_constant_signal():
    G = blur_matrix(0.05, 40)
    np.testing.assert_allclose(G @ np.full(40, 0.37), 0.37)


def test_noise_is_unclipped_with_requested_std():
    s = gen_pulse_clean(SignalParams(0.2, 0.0, 1.0), 4096)
    out = degrade(s, 0.0, 0.1, make_rng(1))
    resid = out.data - s.data
    assert abs(resid.std() - 0.1) < 0.005
    assert out.data.min() < 0 and out.data.max() > 1


def test_degrade_requires_rng_for_noise():
    with pytest.raises(ValueError):
        degrade(gen_pulse_clean(SignalParams(0.2, 0, 1), 16), 0.0, 0.1)


@pytest.mark.parametrize("mode", ["both", "positive_only"])
def test_marginals(mode):
    cfg = GenConfig(polarity_mode=mode)
    rng = make_rng(123)
    ps = [sample_params(cfg, rng) for _ in range(20000)]
    r = np.array([p.r for p in ps])
    b = np.array([p.b for p in ps])
    f = np.array([p.f for p in ps])
    lo, hi = cfg.r_range
    assert stats.kstest(r, "uniform", args=(lo, hi - lo)).pvalue > 1e-3
    assert np.all(np.abs(f - b) > cfg.delta)
    if mode == "both":
        assert stats.kstest(b, "uniform").pvalue > 1e-3
        frac = np.mean(f > b)
        assert abs(frac - expected_positive_fraction(cfg.delta)) < 4 * math.sqrt(0.25 / len(ps))
    else:
        assert np.all(f > b)
        # b is uniform on [0, 1 - delta) after redraws; f | b uniform on [b + delta, 1]
        assert stats.kstest(b, "uniform", args=(0, 1 - cfg.delta)).pvalue > 1e-3
        u = (f - b - cfg.delta) / (1 - b - cfg.delta)
        assert stats.kstest(u, "uniform").pvalue > 1e-3


def test_mixed_mode_f_given_b_is_uniform_on_allowed_set():
    cfg = GenConfig()
    rng = make_rng(5)
    ps = [sample_params(cfg, rng) for _ in range(20000)]
    b = np.array([p.b for p in ps])
    f = np.array([p.f for p in ps])
    below = np.maximum(b - cfg.delta, 0)
    above = np.maximum(1 - b - cfg.delta, 0)
    # map f back to a point of [0, below + above], then normalise
    u = np.where(f < b, f, f - b - cfg.delta + below) / (below + above)
    assert stats.kstest(u, "uniform").pvalue > 1e-3


def test_expected_positive_fraction_by_simulation():
    rng = np.random.default_rng(9)
    delta = 0.3
    b = rng.uniform(size=400000)
    below = np.maximum(b - delta, 0)
    above = np.maximum(1 - b - delta, 0)
    est = np.mean(above / (above + below))
    assert abs(expected_positive_fraction(delta) - est) < 3e-3
    assert math.isclose(expected_positive_fraction(0.1), 0.5, abs_tol=1e-9)


def test_sample_depends_only_on_key():
    cfg = GenConfig(dims=2, D=16)
    a = generate_sample(cfg, 17, 1)
    ds = gen_dataset(cfg, 20, 1)
    np.testing.assert_array_equal(ds.X[17], a.data)
    other = generate_sample(cfg, 17, 2)
    assert not np.array_equal(other.data, a.data)
    assert not np.array_equal(generate_sample(cfg.replace(seed=1), 17, 1).data, a.data)


def test_dataset_hash_is_reproducible_and_sensitive():
    cfg = GenConfig(D=16)
    h1 = gen_dataset(cfg, 50).content_hash()
    assert h1 == gen_dataset(cfg, 50).content_hash()
    assert h1 != gen_dataset(cfg.replace(sigma_n=0.0), 50).content_hash()


def test_dataset_views():
    ds = gen_dataset(GenConfig(D=16, dims=2), 5, 2)
    assert len(ds) == 5 and ds.D == 16 and ds.dims == 2 and ds.stream == 2
    s = ds[3]
    assert s.label_r == ds.r[3] and s.data.shape == (16, 16)
    assert len(list(ds)) == 5
    sub = ds.subset([0, 2])
    np.testing.assert_array_equal(sub.X[1], ds.X[2])
    np.testing.assert_array_equal(ds.polarity, np.where(ds.f > ds.b, 1, -1))


def test_save_load_roundtrip(tmp_path):
    ds = gen_dataset(GenConfig(D=12, dims=2), 7, 1)
    save_dataset(ds, tmp_path, "x")
    back = load_dataset(tmp_path, "x")
    assert back.content_hash() == ds.content_hash()
    assert back.cfg == ds.cfg and back.stream == 1
    header = (tmp_path / "x.csv").read_text().splitlines()[0]
    assert header == "idx,r,b,f,polarity"


def test_clean_dataset_has_no_config():
    ds = clean_dataset([SignalParams(0.2, 0, 1), SignalParams(0.3, 1, 0)], 16)
    assert ds.cfg is None and ds.X.shape == (2, 16)


@pytest.mark.parametrize(
    "kwargs,key",
    [({"D": 4}, "D"), ({"delta": 1.5}, "delta"), ({"sigma_n": -1}, "sigma_n"), ({"polarity_mode": "neg"}, "polarity_mode"), ({"dims": 3}, "dims"), ({"seed": -2}, "seed"), ({"eps_r": 0}, "eps_r")],
)
def test_invalid_config_names_the_key(kwargs, key):
    with pytest.raises(ConfigError) as e:
        GenConfig(**kwargs)
    assert e.value.key == key


def test_from_dict_rejects_unknown_key():
    with pytest.raises(ConfigError):
        GenConfig.from_dict({"D": 16, "colour": 1})
    assert GenConfig.from_dict(GenConfig(D=20).to_dict()) == GenConfig(D=20)


def test_default_blur_scales_with_resolution():
    assert GenConfig(D=64).sigma_g == 1 / 64
    assert GenConfig(D=64, sigma_g=0.0).sigma_g == 0.0


def test_from_samples_builds_dataset():
    samples = [gen_clean(SignalParams(0.2, 0.1, 0.9), 16, 1) for _ in range(3)]
    ds = Dataset.from_samples(samples)
    assert ds.X.shape == (3, 16) and np.all(ds.r == 0.2)


def test_odd_D_half_step_radius_gives_single_pixel():
    D = 31
    r = 0.5 / (D - 1) - 1e-6  # just below half a grid step
    m = pulse_mask(r, D)
    assert m.sum() == 1 and m[15]
    d = disk_mask(r, D)
    assert d.sum() == 1 and d[15, 15]


def test_mask_width_by_enumeration():
    D, r = 32, 0.25
    x = np.arange(D) / (D - 1)
    expected = int(np.sum(np.abs(x - 0.5) <= r))
    assert pulse_mask(r, D).sum() == expected == 16
    xx, yy = np.meshgrid(x, x, indexing="ij")
    assert disk_mask(r, D).sum() == int(np.sum((xx - 0.5) ** 2 + (yy - 0.5) ** 2 <= r * r))


def test_radius_sweep_produces_distinct_nested_masks():
    D = 33
    # one radius between each pair of consecutive pixel distances
    radii = (np.arange(D // 2 + 1) + 0.5) / (D - 1)
    masks = [pulse_mask(r, D) for r in radii if r < 0.5]
    assert len({m.tobytes() for m in masks}) == len(masks)
    for a, b in zip(masks, masks[1:]):
        assert np.all(b[a]) and b.sum() > a.sum()


def test_disk_has_dihedral_symmetry_for_odd_D():
    m = disk_mask(0.37, 31)
    for k in range(4):
        rot = np.rot90(m, k)
        np.testing.assert_array_equal(rot, m)
        np.testing.assert_array_equal(rot.T, m)


def test_degrade_without_blur_or_noise_is_identity():
    s = gen_disk_clean(SignalParams(0.3, 0.2, 0.7), 16)
    out = degrade(s, 0.0, 0.0)
    np.testing.assert_array_equal(out.data, s.data)
    assert out.data is not s.data


def test_vanishing_delta_limit():
    cfg = GenConfig(delta=1e-9, polarity_mode="both")
    rng = make_rng(31)
    ps = [sample_params(cfg, rng) for _ in range(20000)]
    f = np.array([p.f for p in ps])
    b = np.array([p.b for p in ps])
    assert stats.kstest(f, "uniform").pvalue > 1e-3
    assert abs(np.mean(f > b) - 0.5) < 4 * math.sqrt(0.25 / len(ps))
    assert abs(expected_positive_fraction(1e-9) - 0.5) < 1e-6


def test_positive_fraction_large_sample():
    delta = GenConfig().delta
    rng = make_rng(77)
    ps = [sample_params(GenConfig(), rng) for _ in range(100_000)]
    frac = np.mean([p.f > p.b for p in ps])
    assert abs(frac - expected_positive_fraction(delta)) < 0.01


def test_dataset_polarity_count_within_three_sigma():
    cfg = GenConfig(D=16)
    ds = gen_dataset(cfg, 10000)
    p = expected_positive_fraction(cfg.delta)
    n_pos = int(np.sum(ds.polarity > 0))
    assert abs(n_pos - p * 10000) < 3 * math.sqrt(10000 * p * (1 - p))
    pos = gen_dataset(cfg.replace(polarity_mode="positive_only"), 2000)
    assert np.all(pos.polarity > 0)
