import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pln.activations import (
    ActivationSpec,
    apply_activation,
    parse_activation,
    pp_pair,
    verify_pp,
)
from pln.errors import ConfigError

SPECS = [
    ActivationSpec.relu(),
    ActivationSpec.lrelu(0.01),
    ActivationSpec.lrelu(0.5),
    ActivationSpec.genrelu(0.1, 1.0),
    ActivationSpec.genrelu(1.0, 3.0),
]

spec_strategy = st.one_of(
    st.just(ActivationSpec.relu()),
    st.floats(1e-3, 0.999).map(ActivationSpec.lrelu),
    st.tuples(st.floats(1e-3, 5.0), st.floats(1e-3, 5.0))
    .filter(lambda ab: ab[0] < ab[1] * (1 - 1e-6))
    .map(lambda ab: ActivationSpec.genrelu(*ab)),
)


class TestApply:
    def test_relu(self):
        np.testing.assert_array_equal(apply_activation(ActivationSpec.relu(), [2, -3, 0]), [2, 0, 0])

    def test_lrelu(self):
        np.testing.assert_array_equal(apply_activation(ActivationSpec.lrelu(0.5), [-2, 4]), [-1, 4])

    def test_genrelu(self):
        np.testing.assert_array_equal(apply_activation(ActivationSpec.genrelu(1, 3), [2, -2]), [6, -2])

    def test_callable_and_shape(self):
        z = np.arange(12.0).reshape(3, 4) - 6
        out = ActivationSpec.lrelu(0.2)(z)
        assert out.shape == z.shape

    @given(spec_strategy, st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=20), st.floats(1e-3, 1e3))
    def test_positive_homogeneity(self, spec, values, c):
        z = np.array(values)
        np.testing.assert_allclose(apply_activation(spec, c * z), c * apply_activation(spec, z),
                                   rtol=1e-12, atol=1e-300)

    @given(spec_strategy, st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=20))
    def test_monotone(self, spec, values):
        z = np.sort(np.array(values))
        assert np.all(np.diff(apply_activation(spec, z)) >= 0)


class TestSpec:
    @pytest.mark.parametrize("a", [0.0, 1.0, 1.5, -0.1])
    def test_lrelu_range(self, a):
        with pytest.raises(ConfigError):
            ActivationSpec.lrelu(a)

    @pytest.mark.parametrize("a,b", [(1.0, 1.0), (2.0, 1.0), (0.0, 1.0), (-1.0, 2.0)])
    def test_genrelu_range(self, a, b):
        with pytest.raises(ConfigError):
            ActivationSpec.genrelu(a, b)

    def test_defaults(self):
        assert ActivationSpec("lrelu").a == 0.01
        g = ActivationSpec("genrelu")
        assert (g.a, g.b) == (0.1, 1.0)

    @pytest.mark.parametrize("text", ["relu", "lrelu:a=0.01", "genrelu:a=0.1,b=1.0", "lrelu:a=0.3"])
    def test_parse_roundtrip(self, text):
        spec = parse_activation(text)
        assert parse_activation(str(spec)) == spec
        assert str(spec) == text

    @pytest.mark.parametrize("text", ["tanh", "relu:a=1", "lrelu:a=x", "lrelu:b=2", "genrelu:c=1", "lrelu:a=1.5"])
    def test_parse_errors(self, text):
        with pytest.raises(ConfigError):
            parse_activation(text)

    def test_u_scale(self):
        assert ActivationSpec.relu().u_scale == 1.0
        assert ActivationSpec.lrelu(0.5).u_scale == pytest.approx(1 / 1.5)
        assert ActivationSpec.genrelu(1, 3).u_scale == pytest.approx(0.25)


class TestPair:
    def test_relu_n1(self):
        pair = pp_pair(ActivationSpec.relu(), 1)
        np.testing.assert_array_equal(pair.V, [[1], [-1]])
        np.testing.assert_array_equal(pair.U, [[1, -1]])
        y = apply_activation(ActivationSpec.relu(), pair.V @ [-3.0])
        np.testing.assert_array_equal(y, [0, 3])
        assert pair.U @ y == pytest.approx([-3])

    def test_lrelu_n1(self):
        spec = ActivationSpec.lrelu(0.5)
        pair = pp_pair(spec, 1)
        z = pair.V @ [-2.0]
        np.testing.assert_array_equal(z, [-2, 2])
        y = apply_activation(spec, z)
        np.testing.assert_array_equal(y, [-1, 2])
        np.testing.assert_allclose(pair.U @ y, [-2], rtol=1e-15)

    def test_genrelu_n2(self):
        spec = ActivationSpec.genrelu(1, 3)
        pair = pp_pair(spec, 2)
        gamma = np.array([2.0, -5.0])
        np.testing.assert_allclose(pair.U @ apply_activation(spec, pair.V @ gamma), gamma, rtol=1e-15)

    @pytest.mark.parametrize("spec", SPECS, ids=str)
    @pytest.mark.parametrize("n", [1, 3, 16])
    def test_operators_match_dense(self, spec, n):
        pair = pp_pair(spec, n)
        g = np.random.default_rng(0).standard_normal((n, 5))
        np.testing.assert_array_equal(pair.split(g), pair.V @ g)
        y = np.random.default_rng(1).standard_normal((2 * n, 5))
        np.testing.assert_allclose(pair.merge(y), pair.U @ y, rtol=1e-14)

    @pytest.mark.parametrize("n", [1, 4, 9])
    def test_sparsity(self, n):
        pair = pp_pair(ActivationSpec.genrelu(0.2, 0.7), n)
        assert np.all(np.count_nonzero(pair.V, axis=1) == 1)
        assert set(np.unique(np.abs(pair.V[pair.V != 0]))) == {1.0}
        assert np.all(np.count_nonzero(pair.U, axis=1) == 2)

    def test_u_norm(self):
        pair = pp_pair(ActivationSpec.lrelu(0.25), 5)
        for q in (1, 2):
            assert pair.u_norm(q) == pytest.approx(np.linalg.norm(pair.U.ravel(), q))

    @pytest.mark.parametrize("n", [0, -1, 2.5])
    def test_bad_n(self, n):
        with pytest.raises(ConfigError):
            pp_pair(ActivationSpec.relu(), n)

    @settings(max_examples=60, deadline=None)
    @given(spec_strategy, st.integers(1, 128), st.integers(0, 2**32 - 1))
    def test_pp_identity(self, spec, n, seed):
        pair = pp_pair(spec, n)
        gamma = np.random.default_rng(seed).uniform(-1e3, 1e3, (n, 4))
        restored = pair.merge(apply_activation(spec, pair.split(gamma)))
        assert np.max(np.abs(restored - gamma)) <= 1e-9 * max(1.0, np.max(np.abs(gamma)))


class TestVerify:
    def test_relu(self):
        assert verify_pp(ActivationSpec.relu(), 8, 100, seed=0) <= 1e-12

    def test_lrelu(self):
        assert verify_pp(ActivationSpec.lrelu(0.01), 64, 1000, seed=7) <= 1e-10

    def test_genrelu(self):
        assert verify_pp(ActivationSpec.genrelu(0.1, 2), 3, 10, seed=1) <= 1e-12

    def test_deterministic(self):
        spec = ActivationSpec.lrelu(0.3)
        assert verify_pp(spec, 7, 50, seed=3, bound=100) == verify_pp(spec, 7, 50, seed=3, bound=100)

    def test_bad_trials(self):
        with pytest.raises(ConfigError):
            verify_pp(ActivationSpec.relu(), 2, 0)
