import numpy as np
import pytest

from sddr.data import (
    CIFAR_RECORD,
    LabelSpec,
    augment,
    load_cifar100,
    load_labels,
    make_gaussian_task,
    make_glyph_task,
    read_cifar100,
    save_labels,
    write_cifar100,
)
from sddr.errors import ConfigurationError, FormatError
from sddr.nn import Network, SgdConfig, SgdState, sgd_step
from sddr.losses import softmax_ce


def test_gaussian_same_seed_bit_identical():
    a, _ = make_gaussian_task(4, 8, 3.0, 20, 5, seed=1)
    b, _ = make_gaussian_task(4, 8, 3.0, 20, 5, seed=1)
    assert (a.X == b.X).all() and (a.y == b.y).all()


def _fit_linear(train, epochs=60):
    net = Network.build(train.dim, [train.dim], 2, head="linear", seed=0, feature_activation="identity")
    cfg = SgdConfig(learning_rate=0.05, momentum=0.9, weight_decay=0.0, schedule=[])
    state = SgdState()
    rng = np.random.default_rng(0)
    for _ in range(epochs):
        for s in range(0, len(train), 32):
            idx = rng.permutation(len(train))[:32]
            f = net.forward(train.X[idx])
            _, g = softmax_ce(f.logits, train.y[idx], np.ones(len(idx), bool))
            sgd_step(net.parameters(), net.backward(f, g), cfg, state, 0)
    return net


def _accuracy(net, test):
    return float((net.forward(test.X).logits.argmax(1) == test.y).mean())


def test_separated_classes_are_learnable():
    train, test = make_gaussian_task(2, 8, 100.0, 100, 200, seed=0)
    assert _accuracy(_fit_linear(train), test) > 0.99


def test_overlapping_classes_are_chance():
    accs = []
    for seed in range(5):
        train, test = make_gaussian_task(2, 8, 0.0, 100, 400, seed=seed)
        accs.append(_accuracy(_fit_linear(train, 10), test))
    assert abs(np.mean(accs) - 0.5) < 0.05


def test_glyph_zero_jitter_is_constant():
    train, _ = make_glyph_task(2, 8, 5, 1, seed=0, shift=0.0, rotation_deg=0.0, noise=0.0)
    for c in (0, 1):
        rows = train.X[train.y == c]
        assert (rows == rows[0]).all()
    assert not (train.X[train.y == 0][0] == train.X[train.y == 1][0]).all()


def test_glyph_empty_train_split():
    train, test = make_glyph_task(3, 8, 0, 4, seed=0)
    assert len(train) == 0 and len(test) == 12
    assert train.image_shape == (1, 8, 8)


def test_glyph_too_many_classes():
    with pytest.raises(ConfigurationError, match="at most"):
        make_glyph_task(1000)


def test_cifar_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    pixels = rng.integers(0, 256, size=(2, 3072), dtype=np.uint8)
    fine = np.array([7, 99])
    write_cifar100(tmp_path / "train.bin", pixels, fine, np.array([1, 19]))
    px, lab = read_cifar100(tmp_path / "train.bin")
    assert (px == pixels).all() and lab.tolist() == [7, 99]
    raw = (tmp_path / "train.bin").read_bytes()
    assert raw[0] == 1 and raw[CIFAR_RECORD] == 19


def test_cifar_truncated_record(tmp_path):
    (tmp_path / "t.bin").write_bytes(bytes(3073))
    with pytest.raises(FormatError) as exc:
        read_cifar100(tmp_path / "t.bin")
    assert exc.value.offset == 0


def test_cifar_bad_label(tmp_path):
    rec = bytearray(2 * CIFAR_RECORD)
    rec[CIFAR_RECORD + 1] = 100
    (tmp_path / "t.bin").write_bytes(bytes(rec))
    with pytest.raises(FormatError) as exc:
        read_cifar100(tmp_path / "t.bin")
    assert exc.value.offset == CIFAR_RECORD + 1


def test_load_cifar_fixture(tmp_path):
    labels = [LabelSpec(c, f"c{c}") for c in range(100)]
    save_labels(tmp_path / "labels.json", labels)
    px = np.full((3, 3072), 255, dtype=np.uint8)
    write_cifar100(tmp_path / "train.bin", px, np.array([0, 1, 2]))
    write_cifar100(tmp_path / "test.bin", px[:1], np.array([5]))
    train, test = load_cifar100(tmp_path / "train.bin", tmp_path / "test.bin", tmp_path / "labels.json")
    assert train.X.shape == (3, 3072) and train.X.max() == 1.0
    assert test.y.tolist() == [5] and train.image_shape == (3, 32, 32)


def test_labels_underscore_names(tmp_path):
    (tmp_path / "l.json").write_text('[{"class_id": 0, "name": "maple_tree", "lemmas": ["maple_tree"]}]')
    assert load_labels(tmp_path / "l.json")[0].name == "maple tree"


def test_labels_bad_json(tmp_path):
    (tmp_path / "l.json").write_text("[{]")
    with pytest.raises(FormatError, match="line 1"):
        load_labels(tmp_path / "l.json")


def test_augment_preserves_shape_and_values():
    rng = np.random.default_rng(0)
    X = rng.random((4, 3 * 6 * 6))
    out = augment(X, (3, 6, 6), rng)
    assert out.shape == X.shape and out.max() <= X.max()
    assert augment(X, None, rng) is X
