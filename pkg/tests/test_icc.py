import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import naive_icc_map, naive_kl
from icct.errors import ConfigError
from icct.gradcheck import central_diff
from icct.icc import (
    IccLossMode,
    belief_weight_report,
    icc_loss,
    icc_loss_grad,
    icc_map_batch,
    icc_map_per_sample,
    read_icc_csv,
    write_icc_csv,
)

PER = IccLossMode.PER_SAMPLE_MEAN_KL
AVG = IccLossMode.AVERAGED_MAP_KL

# Frozen after checking against conftest.naive_icc_map / naive_kl and central differences.
MAP_10_DIAG = 0.4753668864186717   # e / (e + 3)
MAP_10_OFF = 0.17487770452710946   # 1 / (e + 3)
KL_UNIFORM_VS_10 = 0.10737401950878847
GRAD_UNIFORM_VS_10 = (0.450734, -0.150244)


def test_zero_logits_uniform_map():
    np.testing.assert_allclose(icc_map_per_sample([0.0, 0.0]), np.full((2, 2), 0.25), atol=1e-15)


def test_map_fixture_matches_oracle():
    m = icc_map_per_sample([1.0, 0.0])
    np.testing.assert_allclose(m, naive_icc_map([1.0, 0.0]), atol=1e-15)
    np.testing.assert_allclose(m, [[MAP_10_DIAG, MAP_10_OFF], [MAP_10_OFF, MAP_10_OFF]], atol=1e-15)
    np.testing.assert_allclose(m, [[0.475367, 0.174878], [0.174878, 0.174878]], atol=1e-6)


def test_sign_flip():
    np.testing.assert_array_equal(icc_map_per_sample([-1.0, 0.0]), icc_map_per_sample([1.0, 0.0]))


def test_single_class_rejected():
    with pytest.raises(ConfigError):
        icc_map_per_sample([1.0])
    with pytest.raises(ConfigError):
        icc_map_batch(np.zeros((0, 3)))


def test_batch_map(rng):
    z = rng.standard_normal((1, 6))
    np.testing.assert_allclose(icc_map_batch(z), icc_map_per_sample(z[0]), atol=1e-15)
    twin = np.vstack([z, z])
    np.testing.assert_allclose(icc_map_batch(twin), icc_map_per_sample(z[0]), atol=1e-15)
    z3 = rng.standard_normal((3, 5))
    oracle = sum(naive_icc_map(list(row)) for row in z3) / 3
    np.testing.assert_allclose(icc_map_batch(z3), oracle, atol=1e-15)


logit_vectors = arrays(np.float64, st.integers(2, 20), elements=st.floats(-8, 8, allow_nan=False))


@settings(max_examples=200)
@given(logit_vectors)
def test_map_invariants(z):
    m = icc_map_per_sample(z)
    assert np.all(m >= 0)
    assert abs(m.sum() - 1) < 1e-12
    assert np.max(np.abs(m - m.T)) < 1e-12
    assert np.max(np.abs(icc_map_per_sample(-z) - m)) <= 1e-15


def test_map_not_shift_invariant():
    z = np.array([0.3, -1.2, 2.0, 0.7])
    assert np.max(np.abs(icc_map_per_sample(z + 1.0) - icc_map_per_sample(z))) > 1e-3


def test_saturated_map_stays_finite():
    m = icc_map_per_sample([40.0, -3.0, 1.0])
    assert np.isfinite(m).all() and abs(m.sum() - 1) < 1e-12
    loss = icc_loss([[40.0, -3.0, 1.0]], [[0.0, 1.0, 2.0]], AVG)
    assert np.isfinite(loss)


@pytest.mark.parametrize("mode", [PER, AVG])
def test_self_divergence_zero(rng, mode):
    z = rng.standard_normal((4, 7))
    assert icc_loss(z, z, mode) == 0.0
    np.testing.assert_array_equal(icc_loss_grad(z, z, mode), np.zeros_like(z))


def test_loss_fixture_and_asymmetry():
    s, t = [[1.0, 0.0]], [[0.0, 0.0]]
    oracle = naive_kl(naive_icc_map([0.0, 0.0]), naive_icc_map([1.0, 0.0]))
    assert oracle == pytest.approx(KL_UNIFORM_VS_10, abs=1e-15)
    assert icc_loss(s, t) == pytest.approx(KL_UNIFORM_VS_10, abs=1e-14)
    assert icc_loss(s, t) == pytest.approx(0.107373, abs=1e-5)
    swapped = icc_loss(t, s)
    assert swapped == pytest.approx(naive_kl(naive_icc_map([1.0, 0.0]), naive_icc_map([0.0, 0.0])), abs=1e-14)
    assert abs(swapped - icc_loss(s, t)) > 1e-3


def test_loss_positive_under_perturbation(rng):
    z = rng.standard_normal((3, 5))
    for mode in (PER, AVG):
        assert icc_loss(z + 1e-3 * rng.standard_normal(z.shape), z, mode) > 0


def test_modes_agree_for_single_sample(rng):
    zs, zt = rng.standard_normal((1, 6)), rng.standard_normal((1, 6))
    assert icc_loss(zs, zt, PER) == pytest.approx(icc_loss(zs, zt, AVG), rel=1e-12)
    np.testing.assert_allclose(icc_loss_grad(zs, zt, PER), icc_loss_grad(zs, zt, AVG), atol=1e-13)


def test_grad_fixture():
    s, t = np.array([[1.0, 0.0]]), np.array([[0.0, 0.0]])
    g = icc_loss_grad(s, t)
    numeric = central_diff(lambda z: icc_loss(z, t), s)
    np.testing.assert_allclose(g, numeric, rtol=1e-8)
    np.testing.assert_allclose(g[0], GRAD_UNIFORM_VS_10, atol=1e-6)


@pytest.mark.parametrize("mode", [PER, AVG])
@pytest.mark.parametrize("b,n", [(4, 10), (1, 2), (8, 16), (3, 3)])
def test_grad_matches_finite_differences(rng, mode, b, n):
    zs, zt = rng.standard_normal((b, n)), rng.standard_normal((b, n))
    g = icc_loss_grad(zs, zt, mode)
    numeric = central_diff(lambda z: icc_loss(z, zt, mode), zs, h=1e-5)
    rel = np.abs(g - numeric) / np.maximum(np.maximum(np.abs(g), np.abs(numeric)), 1e-12)
    assert rel.max() < 1e-6


def test_modes_give_different_gradients(rng):
    zs, zt = rng.standard_normal((4, 6)), rng.standard_normal((4, 6))
    assert np.max(np.abs(icc_loss_grad(zs, zt, PER) - icc_loss_grad(zs, zt, AVG))) > 1e-4


def test_mode_parse():
    assert IccLossMode.parse("averaged") is AVG
    assert IccLossMode.parse("PER_SAMPLE_MEAN_KL") is PER
    with pytest.raises(ConfigError):
        IccLossMode.parse("bogus")


def test_belief_weights_reproduce_gradient(rng):
    z = np.zeros((2, 4))
    np.testing.assert_array_equal(belief_weight_report(z, z), np.zeros((2, 4, 4)))
    s, t = np.array([[1.0, 0.0]]), np.array([[0.0, 0.0]])
    np.testing.assert_allclose(2 * belief_weight_report(s, t).sum(axis=2)[0], GRAD_UNIFORM_VS_10, atol=1e-6)
    zs, zt = rng.standard_normal((5, 7)), rng.standard_normal((5, 7))
    np.testing.assert_allclose((2 / 5) * belief_weight_report(zs, zt).sum(axis=2),
                               icc_loss_grad(zs, zt), atol=1e-15)


def test_belief_weight_scales_with_own_logit():
    # maps frozen: only the z_i multiplier changes
    zs = np.array([[0.5, -0.2, 1.0]])
    zt = np.array([[0.1, 0.4, -0.3]])
    gap = icc_map_per_sample(zs[0]) - icc_map_per_sample(zt[0])
    i, k = 2, 0
    addends = [z_i * gap[i, k] for z_i in (1.0, 2.0, 4.0)]
    assert abs(addends[0]) < abs(addends[1]) < abs(addends[2])
    r = belief_weight_report(zs, zt)
    assert r[0, k, i] == pytest.approx(zs[0, i] * gap[i, k], abs=1e-15)


def test_icc_csv_roundtrip(tmp_path, rng):
    m = icc_map_batch(rng.standard_normal((4, 5)))
    path = tmp_path / "map.csv"
    write_icc_csv(path, m)
    lines = path.read_text().splitlines()
    assert lines[0] == "class_i,class_j,value" and len(lines) == 26
    back = read_icc_csv(path)
    # 9 significant digits: each entry is off by at most half a unit in its 9th digit
    np.testing.assert_allclose(back, m, rtol=5.1e-9)
    assert abs(back.sum() - 1) < 25 * 5e-10
