import numpy as np
import pytest

from tactfl.exceptions import DimensionError, FormatError, InputError
from tactfl.model import (
    HeadParams,
    encode,
    fuse,
    head_forward,
    head_loss_grad,
    init_model,
    load_checkpoint,
    save_checkpoint,
    supervised_loss_grad,
    unflatten,
)
from tactfl.numerics import check_gradient, matmul
from tactfl.synthdata import MultiModalSample


@pytest.fixture
def model():
    return init_model({"A": 3, "B": 5}, num_classes=4, hidden=6, embed=4, seed=11)


def test_zero_segment_with_zero_biases_gives_zero(model):
    enc = model.encoders["A"].copy()
    enc.b_in[:] = 0
    enc.b_out[:] = 0
    np.testing.assert_array_equal(encode(enc, np.zeros((5, 3))), np.zeros(4))


def test_duplicated_segment_same_embedding(model):
    seg = np.random.default_rng(0).normal(size=(5, 3))
    enc = model.encoders["A"]
    np.testing.assert_allclose(encode(enc, np.vstack([seg, seg])), encode(enc, seg), atol=1e-14)


def test_encode_matches_straight_line_formula(model):
    seg = np.random.default_rng(1).normal(size=(5, 3))
    enc = model.encoders["A"]
    # Per-timestep linear, mean pool, relu, linear, written out longhand.
    hidden = np.zeros(enc.w_in.shape[1])
    for t in range(5):
        for j in range(hidden.size):
            hidden[j] += (sum(seg[t, i] * enc.w_in[i, j] for i in range(3)) + enc.b_in[j]) / 5
    hidden = np.maximum(hidden, 0)
    expected = [sum(hidden[j] * enc.w_out[j, k] for j in range(hidden.size)) + enc.b_out[k] for k in range(4)]
    np.testing.assert_allclose(encode(enc, seg), expected, atol=1e-12)


def test_encode_shape_errors(model):
    with pytest.raises(DimensionError):
        encode(model.encoders["A"], np.zeros((4, 5)))
    with pytest.raises(InputError):
        encode(model.encoders["A"], np.zeros((0, 3)))


def test_fuse_examples():
    mods = ("A", "B")
    both = fuse({"A": [1.0, 2.0], "B": [3.0, 4.0]}, {"A": True, "B": True}, mods)
    assert both.tolist() == [1, 2, 3, 4]
    one = fuse({"A": [1.0, 2.0], "B": [9.0, 9.0]}, {"A": True, "B": False}, mods)
    assert one.tolist() == [1, 2, 0, 0]
    swapped = fuse({"B": [3.0, 4.0], "A": [1.0, 2.0]}, {"B": True, "A": True}, mods)
    assert swapped.tolist() == both.tolist()


def test_fuse_all_absent():
    with pytest.raises(InputError):
        fuse({"A": [1.0]}, {"A": False}, ("A",))


def test_head_forward_examples():
    head = HeadParams(np.zeros((2, 2)), np.array([1.0, 2.0]))
    assert head_forward(head, [5.0, 7.0]).tolist() == [1.0, 2.0]
    head = HeadParams(np.eye(2), np.zeros(2))
    assert head_forward(head, [3.0, 5.0]).tolist() == [3.0, 5.0]


def test_head_forward_matches_matmul(model):
    fused = np.random.default_rng(2).normal(size=(3, 8))
    expected = matmul(fused, model.head.weight) + model.head.bias
    np.testing.assert_allclose(head_forward(model.head, fused), expected, atol=1e-14)


def test_head_is_linear_in_parameters(model):
    other = init_model({"A": 3, "B": 5}, 4, 6, 4, seed=12)
    fused = np.random.default_rng(3).normal(size=8)
    avg = HeadParams((model.head.weight + other.head.weight) / 2, (model.head.bias + other.head.bias) / 2)
    expected = (head_forward(model.head, fused) + head_forward(other.head, fused)) / 2
    np.testing.assert_allclose(head_forward(avg, fused), expected, atol=1e-12)


def test_uniform_logits_loss_is_log_k():
    head = HeadParams(np.zeros((3, 4)), np.zeros(4))
    loss, _, _ = head_loss_grad(head, np.ones((5, 3)), [0, 1, 2, 3, 0])
    assert loss == pytest.approx(np.log(4), abs=1e-12)


def test_separated_logits_loss_vanishes():
    head = HeadParams(1000 * np.eye(3), np.zeros(3))
    loss, _, _ = head_loss_grad(head, np.eye(3), [0, 1, 2])
    assert loss < 1e-12


def test_head_label_out_of_range(model):
    with pytest.raises(InputError):
        head_loss_grad(model.head, np.ones((1, 8)), [4])


def test_head_gradient_check(model):
    rng = np.random.default_rng(4)
    fused = rng.normal(size=(5, 8))
    labels = [0, 3, 1, 1, 2]
    _, grad, d_fused = head_loss_grad(model.head, fused, labels)

    def loss_w(w):
        return head_loss_grad(HeadParams(w, model.head.bias), fused, labels)[0]

    def loss_b(b):
        return head_loss_grad(HeadParams(model.head.weight, b), fused, labels)[0]

    def loss_x(x):
        return head_loss_grad(model.head, x, labels)[0]

    assert check_gradient(loss_w, model.head.weight, grad.weight) < 1e-4
    assert check_gradient(loss_b, model.head.bias, grad.bias) < 1e-4
    assert check_gradient(loss_x, fused, d_fused) < 1e-4


def test_supervised_gradient_reaches_encoders(model):
    rng = np.random.default_rng(5)
    samples = [
        MultiModalSample({"A": rng.normal(size=(6, 3)), "B": rng.normal(size=(6, 5))}, k % 4, k)
        for k in range(6)
    ]
    labels = [s.label for s in samples]
    _, grad = supervised_loss_grad(model, samples, labels)
    flat_grad = grad.flatten()

    def f(vec):
        return supervised_loss_grad(model.with_flat(vec), samples, labels)[0]

    assert check_gradient(f, model.flatten(), flat_grad) < 1e-4


def test_flatten_round_trip(model):
    vec = model.flatten()
    back = unflatten(model, vec)
    np.testing.assert_array_equal(back.flatten(), vec)
    for (n1, a1), (n2, a2) in zip(model.blocks(), back.blocks()):
        assert n1 == n2
        np.testing.assert_array_equal(a1, a2)


def test_flatten_is_linear(model):
    other = init_model({"A": 3, "B": 5}, 4, 6, 4, seed=99)
    summed = unflatten(model, model.flatten() + other.flatten())
    np.testing.assert_array_equal(summed.encoders["B"].w_out, model.encoders["B"].w_out + other.encoders["B"].w_out)
    np.testing.assert_array_equal(summed.head.bias, model.head.bias + other.head.bias)


def test_parameter_count_formula():
    d_a, d_b, h, d_e, k = 24, 24, 32, 16, 4
    m = init_model({"A": d_a, "B": d_b}, k, h, d_e, seed=0)
    expected = (d_a + 1) * h + (h + 1) * d_e + (d_b + 1) * h + (h + 1) * d_e + (2 * d_e + 1) * k
    assert m.num_params() == expected == m.flatten().size


def test_unflatten_rejects_wrong_manifest(model):
    with pytest.raises(FormatError):
        unflatten(model, model.flatten()[:-1])
    bad = list(model.manifest())
    bad[0] = ("encoder.A.w_in", (2, 2))
    with pytest.raises(FormatError):
        unflatten(model, model.flatten(), manifest=bad)


def test_init_is_deterministic_and_bounded():
    a = init_model({"A": 9, "B": 4}, 3, 8, 5, seed=3)
    b = init_model({"A": 9, "B": 4}, 3, 8, 5, seed=3)
    np.testing.assert_array_equal(a.flatten(), b.flatten())
    assert np.abs(a.encoders["A"].w_in).max() <= 1 / 3
    assert np.abs(a.encoders["A"].w_out).max() <= 1 / np.sqrt(8)


def test_checkpoint_round_trip(tmp_path, model):
    path = tmp_path / "model.ckpt"
    save_checkpoint(model, path)
    loaded = load_checkpoint(path, model)
    np.testing.assert_array_equal(loaded.flatten(), model.flatten())


def test_checkpoint_manifest_mismatch(tmp_path, model):
    path = tmp_path / "model.ckpt"
    save_checkpoint(model, path)
    other = init_model({"A": 3, "B": 5}, 4, 7, 4, seed=0)
    with pytest.raises(FormatError):
        load_checkpoint(path, other)
