"""Both kernel backends against each other and against oracles composed from
plain diffcore primitives."""
import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from sdnfuse import _pykernels, kernels
from sdnfuse import diffcore as dc
from sdnfuse.diffcore import Tape, Value


def composed_entropy(s: Value, eps=1e-12) -> Value:
    q = dc.div(s, dc.sum(s, axis=1))
    h = dc.sum(dc.mul(q, dc.log(dc.maximum(q, eps))), axis=1)
    return dc.scalar_mul(dc.mean(h), -1.0)


def composed_angle(a: Value, b: Value, clamp=1e-12) -> Value:
    dot = dc.sum(dc.mul(a, b), axis=1)
    na = dc.sqrt(dc.sum(dc.square(a), axis=1))
    nb = dc.sqrt(dc.sum(dc.square(b), axis=1))
    cos = dc.clamp(dc.div(dot, dc.mul(na, nb)), -1 + clamp, 1 - clamp)
    return dc.mean(dc.arccos(cos))


def value_and_grads(fn, *xs):
    ps = [Value(x, requires_grad=True) for x in xs]
    with Tape() as tape:
        out = fn(*ps)
        dc.backward(out, tape)
    grads = [p.grad.copy() for p in ps]
    tape.reset()
    return out.item(), grads


def test_fallback_always_available():
    assert "python" in kernels.available_backends()
    with pytest.raises(ValueError):
        kernels.use_backend("fortran")


def test_use_backend_returns_previous():
    start = kernels.backend()
    prev = kernels.use_backend("python")
    assert prev == start and kernels.backend() == "python"
    kernels.use_backend(start)


class TestKumaraswamy:
    def test_closed_forms(self, backend):
        v = kernels.kuma_forward(np.array([[0.0, 0.75, 0.3]]), np.array([[2.0]]))
        np.testing.assert_allclose(v, [[0.0, 0.5, 1 - 0.7 ** 0.5]], atol=1e-15)
        u = np.random.default_rng(0).uniform(size=(4, 6))
        np.testing.assert_allclose(kernels.kuma_forward(u, np.ones((4, 1))), u, atol=1e-15)

    def test_partials_match_finite_differences(self, backend, rng):
        u = rng.uniform(0.05, 0.95, size=(6, 4))
        b = rng.uniform(0.3, 3.0, size=(6, 1))
        _, du, db = kernels.kuma_partials(u, b)
        h = 1e-6
        num_du = (kernels.kuma_forward(u + h, b) - kernels.kuma_forward(u - h, b)) / (2 * h)
        num_db = (kernels.kuma_forward(u, b + h) - kernels.kuma_forward(u, b - h)) / (2 * h)
        np.testing.assert_allclose(du, num_du, rtol=1e-7)
        np.testing.assert_allclose(db, num_db, rtol=1e-6, atol=1e-12)

    def test_floor_keeps_gradients_finite(self, backend):
        _, du, db = kernels.kuma_partials(np.array([[1.0, 1 - 1e-15]]), np.array([[1e-3]]))
        assert np.all(np.isfinite(du)) and np.all(np.isfinite(db))


class TestStick:
    def test_examples(self, backend):
        np.testing.assert_allclose(kernels.stick_forward(np.array([[0.5, 0.5]])), [[0.5, 0.25, 0.25]])
        np.testing.assert_array_equal(kernels.stick_forward(np.zeros((1, 2))), [[0.0, 0.0, 1.0]])

    @given(arrays(np.float64, (5, 7), elements=st.floats(0.0, 1.0)))
    def test_rows_on_simplex(self, v):
        for name in kernels.available_backends():
            prev = kernels.use_backend(name)
            s = kernels.stick_forward(v)
            kernels.use_backend(prev)
            assert np.all(s >= 0)
            np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-12)

    def test_backward_matches_finite_differences(self, backend, rng):
        v = rng.uniform(0.05, 0.95, size=(4, 5))
        g = rng.normal(size=(4, 6))
        gv = kernels.stick_backward(v, g)
        h = 1e-6
        num = np.empty_like(v)
        for idx in np.ndindex(*v.shape):
            vp, vm = v.copy(), v.copy()
            vp[idx] += h
            vm[idx] -= h
            num[idx] = ((kernels.stick_forward(vp) - kernels.stick_forward(vm)) * g).sum() / (2 * h)
        np.testing.assert_allclose(gv, num, rtol=1e-7, atol=1e-10)


class TestEntropy:
    @pytest.mark.parametrize("row,expected", [
        ([1.0, 0.0, 0.0, 0.0], 0.0),
        ([0.25] * 4, np.log(4)),
        ([0.5, 0.5, 0.0, 0.0], np.log(2)),
    ])
    def test_closed_forms(self, backend, row, expected):
        assert kernels.entropy_forward(np.array([row])) == pytest.approx(expected, abs=1e-15)

    def test_matches_composed_oracle(self, backend, rng):
        s = rng.dirichlet(np.ones(6), size=9)
        h, (g,) = value_and_grads(lambda x: dc.entropy_function(x), s)
        ho, (go,) = value_and_grads(composed_entropy, s)
        assert h == pytest.approx(ho, rel=1e-13)
        np.testing.assert_allclose(g, go, rtol=1e-10, atol=1e-14)

    def test_general_p_gradient(self, backend, rng):
        s = rng.dirichlet(np.ones(5), size=4)
        for p in (0.5, 2.0):
            h, gs = kernels.entropy_value_and_grad(s, p)
            step = 1e-6
            num = np.empty_like(s)
            for idx in np.ndindex(*s.shape):
                sp, sm = s.copy(), s.copy()
                sp[idx] += step
                sm[idx] -= step
                num[idx] = (kernels.entropy_forward(sp, p) - kernels.entropy_forward(sm, p)) / (2 * step)
            np.testing.assert_allclose(gs, num, rtol=1e-6, atol=1e-9)

    def test_zero_rows_skipped(self, backend):
        s = np.array([[0.0, 0.0, 0.0], [0.5, 0.5, 0.0]])
        h, g = kernels.entropy_value_and_grad(s)
        assert h == pytest.approx(np.log(2))
        assert not g[0].any()


class TestAngle:
    def test_closed_forms(self, backend):
        a = np.array([[1.0, 0.0], [1.0, 0.0]])
        b = np.array([[0.0, 1.0], [1.0, 1.0]])
        assert kernels.angle_forward(a[:1], b[:1]) == pytest.approx(np.pi / 2)
        assert kernels.angle_forward(a[1:], b[1:]) == pytest.approx(np.pi / 4)

    def test_matches_composed_oracle(self, backend, rng):
        a = rng.dirichlet(np.ones(5), size=8)
        b = rng.dirichlet(np.ones(5), size=8)
        t, ga = value_and_grads(lambda x, y: dc.mean_row_angle(x, y), a, b)
        to, go = value_and_grads(composed_angle, a, b)
        assert t == pytest.approx(to, rel=1e-13)
        for x, y in zip(ga, go):
            np.testing.assert_allclose(x, y, rtol=1e-9, atol=1e-13)

    def test_identical_rows_have_zero_gradient(self, backend, rng):
        a = rng.dirichlet(np.ones(4), size=3)
        theta, ga, gb = kernels.angle_value_and_grad(a, a.copy())
        assert theta < 1e-5
        assert np.all(np.isfinite(ga)) and np.all(np.isfinite(gb))


@pytest.mark.skipif("compiled" not in kernels.available_backends(), reason="extension not built")
class TestBackendsAgree:
    def _both(self, fn, *args):
        prev = kernels.use_backend("python")
        py = fn(*args)
        kernels.use_backend("compiled")
        cy = fn(*args)
        kernels.use_backend(prev)
        return py, cy

    def test_all_kernels(self, rng):
        u = rng.uniform(size=(50, 9))
        beta = rng.uniform(0.2, 4.0, size=(50, 1))
        s = rng.dirichlet(np.ones(10) * 0.3, size=50)
        s2 = rng.dirichlet(np.ones(10), size=50)
        g = rng.normal(size=(50, 10))
        np.testing.assert_allclose(*self._both(kernels.kuma_forward, u, beta), rtol=1e-12, atol=1e-15)
        for a, b in zip(*self._both(kernels.kuma_partials, u, beta)):
            np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)
        np.testing.assert_allclose(*self._both(kernels.stick_forward, u), rtol=1e-13, atol=1e-16)
        np.testing.assert_allclose(*self._both(kernels.stick_backward, u, g), rtol=1e-12, atol=1e-15)
        py, cy = self._both(kernels.entropy_value_and_grad, s)
        assert py[0] == pytest.approx(cy[0], rel=1e-13)
        np.testing.assert_allclose(py[1], cy[1], rtol=1e-12, atol=1e-15)
        py, cy = self._both(kernels.angle_value_and_grad, s, s2)
        assert py[0] == pytest.approx(cy[0], rel=1e-13)
        for a, b in zip(py[1:], cy[1:]):
            np.testing.assert_allclose(a, b, rtol=1e-11, atol=1e-15)


def test_python_module_has_compiled_api():
    names = ["kuma_forward", "kuma_partials", "stick_forward", "stick_backward", "entropy_forward",
             "entropy_value_and_grad", "angle_forward", "angle_value_and_grad"]
    for n in names:
        assert callable(getattr(_pykernels, n))
