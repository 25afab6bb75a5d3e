import numpy as np
import pytest

from daffpinn import jets as J
from daffpinn import network as N
from daffpinn import tape as T
from daffpinn.encoders import identity_encode


def _loss_program(seed=0):
    """Scalar loss through a small net including second-order jet terms."""
    params = N.init_params(2, 6, 2, seed=seed, use_bias=True)
    rng = np.random.default_rng(seed)
    x, y = rng.uniform(-1, 1, 8), rng.uniform(-1, 1, 8)
    enc = identity_encode(J.jet_seed(x, y, 2))

    def loss(p):
        u = N.forward(p, enc)
        r = u.laplacian() + u.value * 3.0
        return T.mean(T.square(r))

    return params, loss


class TestGradients:
    def test_matches_central_differences(self):
        params, loss = _loss_program()
        tape = T.ParamTape()
        tape.set_root(T.reshape(loss(params.record(tape)), ()))
        grads = T.grad_params(tape)
        named = params.named()
        h = 1e-6
        for name, val in named.items():
            flat = val.ravel()
            for i in range(0, flat.size, max(1, flat.size // 5)):
                up, dn = dict(named), dict(named)
                a, b = flat.copy(), flat.copy()
                a[i] += h
                b[i] -= h
                up[name] = a.reshape(val.shape)
                dn[name] = b.reshape(val.shape)
                fd = (float(loss(params.with_values(up))) - float(loss(params.with_values(dn)))) / (2 * h)
                got = grads[name].ravel()[i]
                assert got == pytest.approx(fd, rel=1e-5, abs=1e-8), (name, i)

    def test_replay_bit_identical(self):
        params, loss = _loss_program(3)
        tape = T.ParamTape()
        root = tape.set_root(T.reshape(loss(params.record(tape)), ()))
        assert tape.replay() == float(root.value)

    def test_replay_with_override_equals_fresh_forward(self):
        params, loss = _loss_program(4)
        tape = T.ParamTape()
        tape.set_root(T.reshape(loss(params.record(tape)), ()))
        named = {k: v * 1.1 for k, v in params.named().items()}
        assert tape.replay(named) == pytest.approx(float(loss(params.with_values(named))), rel=1e-14)

    def test_unused_parameter_gets_zero(self):
        tape = T.ParamTape()
        a = tape.param("a", [1.0, 2.0])
        tape.param("b", [5.0])
        tape.set_root(T.sum(T.square(a)))
        g = T.grad_params(tape)
        np.testing.assert_array_equal(g["a"], [2.0, 4.0])
        np.testing.assert_array_equal(g["b"], [0.0])


class TestErrors:
    def test_duplicate_parameter(self):
        tape = T.ParamTape()
        tape.param("w", 1.0)
        with pytest.raises(T.TapeError):
            tape.param("w", 2.0)

    def test_non_scalar_root(self):
        tape = T.ParamTape()
        w = tape.param("w", [1.0, 2.0])
        with pytest.raises(T.TapeError):
            tape.set_root(T.square(w))

    def test_mixed_tapes(self):
        a = T.ParamTape().param("a", 1.0)
        b = T.ParamTape().param("b", 1.0)
        with pytest.raises(T.TapeError):
            T.add(a, b)

    def test_plain_arrays_pass_through(self):
        out = T.tanh(np.array([0.0, 1.0]))
        assert isinstance(out, np.ndarray)


@pytest.mark.parametrize("shape_a,shape_b", [((3, 4), (4,)), ((3, 4), (1, 4)), ((2, 3, 4), (3, 1))])
def test_broadcast_gradient(shape_a, shape_b):
    rng = np.random.default_rng(0)
    tape = T.ParamTape()
    a = tape.param("a", rng.normal(size=shape_a))
    b = tape.param("b", rng.normal(size=shape_b))
    tape.set_root(T.sum(T.mul(a, b)))
    g = T.grad_params(tape)
    np.testing.assert_allclose(g["b"], np.sum(np.broadcast_to(a.value, np.broadcast_shapes(shape_a, shape_b)),
                                              axis=tuple(range(len(shape_a) - len(shape_b))))
                               .sum(axis=tuple(i for i, s in enumerate(shape_b) if s == 1), keepdims=True)
                               .reshape(shape_b))
    assert g["a"].shape == shape_a
