import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from puad import autodiff as ad
from puad.autodiff import ParameterSet
from puad.errors import DomainError, FormatError, NumericError, ShapeError


def numeric_grad(f, x, h=1e-6):
    """Central differences of scalar ``f`` w.r.t. every entry of array ``x``."""
    g = np.zeros_like(x)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f(x)
        flat[i] = orig - h
        down = f(x)
        flat[i] = orig
        gf[i] = (up - down) / (2 * h)
    return g


def grad_of(build, x):
    p = ad.parameter(x)
    ad.backward(build(p))
    return p.grad


UNARY = {
    "relu": (ad.relu, lambda v: np.maximum(v, 0)),
    "leaky_relu": (ad.leaky_relu, lambda v: np.where(v > 0, v, 0.01 * v)),
    "sigmoid": (ad.sigmoid, lambda v: 1 / (1 + np.exp(-v))),
    "exp": (ad.exp, np.exp),
    "neg_exp": (ad.neg_exp, lambda v: np.exp(-v)),
    "softplus": (ad.softplus, lambda v: np.log1p(np.exp(v))),
    "abs": (ad.abs_, np.abs),
}

POSITIVE = {
    "log": (ad.log, np.log),
    "neg_log1mexp": (ad.neg_log1mexp, lambda v: -np.log(1 - np.exp(-v))),
    "reciprocal": (ad.reciprocal, lambda v: 1 / v),
}


class TestElementwise:
    @pytest.mark.parametrize("name", sorted(UNARY))
    def test_unary_matches_finite_differences(self, name, rng):
        op, ref = UNARY[name]
        # keep away from the kinks of relu / leaky_relu / abs
        x = rng.uniform(0.1, 2.0, size=(3, 4)) * rng.choice([-1, 1], size=(3, 4))
        np.testing.assert_allclose(op(ad.constant(x)).value, ref(x), rtol=1e-12)
        g = grad_of(lambda p: ad.sum_(op(p)), x.copy())
        np.testing.assert_allclose(g, numeric_grad(lambda v: ref(v).sum(), x.copy()), rtol=1e-6, atol=1e-9)

    @pytest.mark.parametrize("name", sorted(POSITIVE))
    def test_positive_domain_ops(self, name, rng):
        op, ref = POSITIVE[name]
        x = rng.uniform(0.2, 3.0, size=5)
        np.testing.assert_allclose(op(ad.constant(x)).value, ref(x), rtol=1e-12)
        g = grad_of(lambda p: ad.sum_(op(p)), x.copy())
        np.testing.assert_allclose(g, numeric_grad(lambda v: ref(v).sum(), x.copy()), rtol=1e-6)

    @pytest.mark.parametrize("name", ["log", "neg_log1mexp", "reciprocal"])
    def test_domain_errors(self, name):
        with pytest.raises(DomainError):
            POSITIVE[name][0](ad.constant(np.array([1.0, 0.0])))

    def test_log_rejects_negative(self):
        with pytest.raises(DomainError):
            ad.log(ad.constant(-1.0))

    def test_neg_log1mexp_reference_value(self):
        # 30-digit mpmath evaluation of -log(1 - e^-5)
        assert ad.neg_log1mexp(ad.constant(5.0)).item() == pytest.approx(0.0067607494494885578, rel=1e-14)

    def test_neg_log1mexp_tiny_argument(self):
        # -log(1 - e^-x) ~ -log(x) for small x, where the naive form loses precision
        x = 1e-12
        assert ad.neg_log1mexp(ad.constant(x)).item() == pytest.approx(-math.log(x), rel=1e-9)

    def test_softplus_reference_and_overflow(self):
        assert ad.softplus(ad.constant(1.5)).item() == pytest.approx(1.7014132779827524, rel=1e-12)
        big = ad.softplus(ad.constant(np.array([800.0, -800.0]))).value
        assert big[0] == 800.0 and big[1] == 0.0

    def test_sigmoid_is_stable(self):
        v = ad.sigmoid(ad.constant(np.array([-1000.0, 0.0, 1000.0]))).value
        np.testing.assert_array_equal(v, [0.0, 0.5, 1.0])

    def test_abs_subgradient_at_zero(self):
        g = grad_of(lambda p: ad.sum_(ad.abs_(p)), np.array([-2.0, 0.0, 3.0]))
        np.testing.assert_array_equal(g, [-1.0, 0.0, 1.0])

    def test_clamp_min_gradient_zero_below_floor(self):
        g = grad_of(lambda p: ad.sum_(ad.clamp_min(p, 0.5)), np.array([0.1, 0.7]))
        np.testing.assert_array_equal(g, [0.0, 1.0])

    def test_dispatch(self):
        x = ad.constant(np.array([1.0, -1.0]))
        np.testing.assert_array_equal(ad.elementwise("relu", x).value, [1.0, 0.0])
        np.testing.assert_array_equal(ad.elementwise("clamp_min", x, 0.0).value, [1.0, 0.0])
        with pytest.raises(ValueError):
            ad.elementwise("nope", x)


class TestBinary:
    def test_broadcast_gradients(self, rng):
        a, b = rng.normal(size=(4, 3)), rng.normal(size=3)
        pa, pb = ad.parameter(a), ad.parameter(b)
        ad.backward(ad.sum_(ad.mul(ad.sub(pa, pb), ad.add(pa, pb))))
        # d/da sum(a^2 - b^2) = 2a ; d/db = -2 b * rows
        np.testing.assert_allclose(pa.grad, 2 * a)
        np.testing.assert_allclose(pb.grad, -2 * b * 4)

    def test_incompatible_shapes_named(self):
        with pytest.raises(ShapeError, match=r"\(2,\).*\(3,\)"):
            ad.add(ad.constant(np.zeros(2)), ad.constant(np.zeros(3)))

    def test_operators(self):
        p = ad.parameter(np.array(3.0))
        out = 2.0 * p - 1.0 + (-p) * p
        ad.backward(out)
        assert out.item() == 6 - 1 - 9
        assert p.grad == pytest.approx(2 - 6)


class TestAffine:
    def test_batch_and_row(self, rng):
        x, W, b = rng.normal(size=(5, 3)), rng.normal(size=(3, 2)), rng.normal(size=2)
        np.testing.assert_allclose(ad.affine(x, W, b).value, x @ W + b)
        np.testing.assert_allclose(ad.affine(x[0], W, b).value, x[0] @ W + b)

    def test_gradients(self, rng):
        x, W, b = rng.normal(size=(5, 3)), rng.normal(size=(3, 2)), rng.normal(size=2)
        px, pW, pb = ad.parameter(x), ad.parameter(W), ad.parameter(b)
        ad.backward(ad.sum_(ad.sq_l2_norm(ad.affine(px, pW, pb), axis=1)))

        def f(which, v):
            args = {"x": x, "W": W, "b": b, which: v}
            return float(np.sum((args["x"] @ args["W"] + args["b"]) ** 2))

        for name, node, ref in (("x", px, x), ("W", pW, W), ("b", pb, b)):
            np.testing.assert_allclose(node.grad, numeric_grad(lambda v: f(name, v), ref.copy()), rtol=1e-6, atol=1e-8)

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(4, 3\).*\(2, 2\)"):
            ad.affine(np.zeros((4, 3)), np.zeros((2, 2)))
        with pytest.raises(ShapeError):
            ad.affine(np.zeros((4, 2)), np.zeros((2, 2)), np.zeros(3))


class TestReductions:
    @pytest.mark.parametrize("kind,ref", [
        ("sum", np.sum),
        ("mean", np.mean),
        ("sq_l2_norm", lambda v, axis=None: np.sum(v * v, axis=axis)),
        ("l2_norm", lambda v, axis=None: np.sqrt(np.sum(v * v, axis=axis))),
    ])
    @pytest.mark.parametrize("axis", [None, 0, 1])
    def test_values_and_grads(self, kind, ref, axis, rng):
        x = rng.normal(size=(4, 3))
        np.testing.assert_allclose(ad.reduce(kind, ad.constant(x), axis).value, ref(x, axis=axis), rtol=1e-12)
        w = rng.normal(size=np.shape(ref(x, axis=axis)))
        g = grad_of(lambda p: ad.sum_(ad.mul(ad.reduce(kind, p, axis), w)), x.copy())
        np.testing.assert_allclose(g, numeric_grad(lambda v: float(np.sum(ref(v, axis=axis) * w)), x.copy()), rtol=1e-6, atol=1e-9)

    def test_l2_norm_gradient_at_origin(self):
        g = grad_of(lambda p: ad.sum_(ad.l2_norm(p, axis=1)), np.array([[0.0, 0.0], [3.0, 4.0]]))
        np.testing.assert_allclose(g, [[0.0, 0.0], [0.6, 0.8]])

    def test_empty_reduction_rejected(self):
        with pytest.raises(DomainError):
            ad.mean(ad.constant(np.zeros((0, 3))))

    def test_abs_reduction_and_unknown(self):
        assert ad.reduce("abs", ad.constant(-2.0)).item() == 2.0
        with pytest.raises(ValueError):
            ad.reduce("max", ad.constant(1.0))


class TestBackward:
    def test_fan_out_accumulates(self):
        w = ad.parameter(np.array(1.5))
        ad.backward(ad.add(w, w))
        assert w.grad == 2.0

    def test_diamond_graph(self):
        w = ad.parameter(np.array(2.0))
        a = ad.mul(w, w)
        out = ad.add(ad.exp(a), ad.scale(a, 3.0))
        ad.backward(out)
        assert w.grad == pytest.approx((math.exp(4.0) + 3.0) * 4.0)

    def test_repeated_backward_accumulates_until_zeroed(self):
        w = ad.parameter(np.array([1.0, 2.0]))
        for _ in range(2):
            ad.backward(ad.sum_(ad.scale(w, 3.0)))
        np.testing.assert_array_equal(w.grad, [6.0, 6.0])
        w.zero_grad()
        np.testing.assert_array_equal(w.grad, [0.0, 0.0])

    def test_constants_get_no_gradient(self):
        c = ad.constant(np.array([1.0, 2.0]))
        w = ad.parameter(np.array([1.0, 1.0]))
        ad.backward(ad.sum_(ad.mul(c, w)))
        np.testing.assert_array_equal(c.grad, [0.0, 0.0])
        np.testing.assert_array_equal(w.grad, [1.0, 2.0])

    def test_non_scalar_root_rejected(self):
        with pytest.raises(ShapeError):
            ad.backward(ad.parameter(np.zeros(3)))

    def test_deep_chain_does_not_recurse(self):
        w = ad.parameter(np.array(1.0))
        x = w
        for _ in range(5000):
            x = ad.scale(x, 1.0)
        ad.backward(x)
        assert w.grad == 1.0


def _mlp_params(rng, bias=True):
    ps = ParameterSet()
    ps.add_layer("l0", rng.normal(size=(3, 4)), rng.normal(size=4) if bias else None)
    ps.add_layer("l1", rng.normal(size=(4, 1)), rng.normal(size=1) if bias else None)
    return ps


class TestGradCheck:
    def test_small_network_passes(self, rng):
        ps = _mlp_params(rng)
        x = rng.normal(size=(6, 3))

        def loss():
            h = ad.leaky_relu(ad.affine(x, ps.weight("l0"), ps.bias("l0")))
            return ad.mean(ad.softplus(ad.affine(h, ps.weight("l1"), ps.bias("l1"))))

        assert ad.grad_check(loss, ps) < 1e-6

    def test_detects_wrong_gradient(self, rng):
        ps = _mlp_params(rng)
        x = rng.normal(size=(6, 3))

        def loss():
            out = ad.affine(x, ps.weight("l0"), ps.bias("l0"))
            # forward squares, backward pretends it is the identity
            bad = ad.Node(out.value ** 2, (out,), "bad", lambda g: (g,))
            return ad.sum_(bad)

        assert ad.grad_check(loss, ps) > 1e-2

    def test_non_finite_loss(self, rng):
        ps = _mlp_params(rng)
        with pytest.raises(NumericError):
            ad.grad_check(lambda: ad.scale(ad.sum_(ps.weight("l0")), np.inf), ps)

    def test_bad_step(self, rng):
        with pytest.raises(ValueError):
            ad.grad_check(lambda: ad.constant(0.0), _mlp_params(rng), step=0.0)


class TestParameterSet:
    def test_text_round_trip_is_exact(self, rng):
        ps = _mlp_params(rng)
        ps.add_layer("nb", rng.normal(size=(2, 2)))
        back = ParameterSet.from_text(ps.to_text())
        assert back.layers == ps.layers
        assert back.has_bias == ps.has_bias
        for name, node in ps.items():
            np.testing.assert_array_equal(back[name].value, node.value)

    def test_copy_is_independent(self, rng):
        ps = _mlp_params(rng)
        cp = ps.copy()
        cp.weight("l0").value[0, 0] += 1.0
        assert cp.weight("l0").value[0, 0] != ps.weight("l0").value[0, 0]

    def test_load_arrays_checks_shapes(self, rng):
        ps = _mlp_params(rng)
        with pytest.raises(ShapeError):
            ps.load_arrays({"l0.W": np.zeros((2, 2))})

    def test_duplicate_layer(self, rng):
        ps = _mlp_params(rng)
        with pytest.raises(ValueError):
            ps.add_layer("l0", np.zeros((1, 1)))

    @pytest.mark.parametrize("text", ["l0.W 2x2 1 2 3\n", "l0.W axb 1\n", "l0.W\n", "l0.Q 1x1 1\n"])
    def test_malformed_text(self, text):
        with pytest.raises(FormatError):
            ParameterSet.from_text(text)

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 4)),
                  elements=st.floats(allow_nan=False, allow_infinity=False, width=64)))
    def test_any_finite_matrix_round_trips(self, W):
        ps = ParameterSet()
        ps.add_layer("a", W)
        np.testing.assert_array_equal(ParameterSet.from_text(ps.to_text()).weight("a").value, W)
