import numpy as np
import pytest

from gradcases import P, lstm_case, op_cases

from stackamr import autodiff as ad
from stackamr.autodiff import (EmptyStack, ParamStore, ShapeMismatch, StackLstm, Tensor,
                               gradient_check, load_checkpoint, save_checkpoint)

TOL = 1e-4


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def test_relu_and_tanh_examples():
    x = Tensor([-1.0, 2.0], requires_grad=True)
    ad.total(ad.relu(x)).backward()
    assert x.grad.tolist() == [0.0, 1.0]
    z = Tensor(np.zeros(3), requires_grad=True)
    ad.total(ad.tanh(z)).backward()
    assert z.grad.tolist() == [1.0, 1.0, 1.0]


def test_backward_accumulates(rng):
    x = P(rng, 3)
    f = ad.total(ad.mul(x, x))
    f.backward()
    f.backward()
    assert np.allclose(x.grad, 4 * x.value)


def test_shape_mismatch_names_both_shapes(rng):
    with pytest.raises(ShapeMismatch) as err:
        ad.matvec(P(rng, 3, 4), P(rng, 5))
    assert "(3, 4)" in str(err.value) and "(5,)" in str(err.value)
    with pytest.raises(ShapeMismatch):
        ad.add(P(rng, 2), P(rng, 3))


def test_every_operation_gradient(rng):
    for name, (f, ts) in op_cases(rng).items():
        err = gradient_check(f, ts)
        assert err < TOL, (name, err)


def test_lstm_cell_gradient(rng):
    f, ts = lstm_case(rng)
    assert gradient_check(f, ts) < TOL


def test_stack_lstm_push_pop():
    store = ParamStore(1)
    S = StackLstm(store, "s", 3, 4)
    empty = S.empty()
    assert np.array_equal(S.summary(empty).value, store["s.init"].value[:4])
    top = S.push(empty, Tensor(np.ones(3)))
    before = S.summary(top).value.copy()
    again = S.pop(S.push(top, Tensor(np.full(3, 2.0))))
    assert np.array_equal(S.summary(again).value, before)
    with pytest.raises(EmptyStack):
        S.pop(empty)


def test_stack_lstm_gradient_through_push_pop_push(rng):
    store = ParamStore(2)
    S = StackLstm(store, "s", 3, 4)
    x1, x2, x3 = P(rng, 3), P(rng, 3), P(rng, 3)

    def f():
        node = S.push(S.empty(), x1)
        node = S.pop(S.push(node, x2))
        return ad.total(S.summary(S.push(node, x3)))

    assert gradient_check(f, [S.W, S.b, x1, x2, x3]) < TOL


def test_softmax_properties(rng):
    for _ in range(20):
        y = ad.softmax(Tensor(rng.normal(size=7) * 10)).value
        assert abs(y.sum() - 1.0) < 1e-9 and (y > 0).all()


def test_determinism():
    a = ParamStore(5)
    b = ParamStore(5)
    for s in (a, b):
        s.add("W", (4, 4))
    assert np.array_equal(a["W"].value, b["W"].value)


def test_init_schemes():
    s = ParamStore(0)
    assert not s.add("b", (5,), "zeros").value.any()
    e = s.add("E", (50, 8), "embedding").value
    assert np.abs(e).max() <= 0.1
    w = s.add("W", (8, 24)).value
    assert np.abs(w).max() <= np.sqrt(6 / 32)
    with pytest.raises(KeyError):
        s.add("b", (5,))


def test_checkpoint_round_trip(tmp_path):
    s = ParamStore(3)
    s.add("W", (3, 4))
    s.add("E", (6, 2), "embedding")
    path = str(tmp_path / "c.npz")
    save_checkpoint(path, s, {"hidden": 4, "name": "x"})
    values, config = load_checkpoint(path)
    assert config == {"hidden": 4, "name": "x"}
    t = ParamStore(99)
    t.add("W", (3, 4))
    t.add("E", (6, 2), "embedding")
    t.load_state_dict(values)
    for name, p in s:
        assert np.array_equal(p.value, t[name].value)
    assert not [f for f in tmp_path.iterdir() if f.suffix == ".tmp"]


def test_sgd_schedule_and_clip():
    s = ParamStore(0)
    w = s.add("w", (2,), "zeros")
    opt = ad.Sgd(s, lr=0.1, decay=0.05, clip=1.0)
    opt.epoch = 2
    assert opt.rate() == pytest.approx(0.1 / 1.1)
    w.grad[...] = [3.0, 4.0]
    opt.step()
    assert np.allclose(w.value, -opt.rate() * np.array([0.6, 0.8]))
    assert not w.grad.any()


def test_no_grad_records_nothing(rng):
    x = P(rng, 3)
    with ad.no_grad():
        y = ad.tanh(x)
    assert y.backward_fn is None and y.parents == ()
