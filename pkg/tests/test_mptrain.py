from dataclasses import replace

import numpy as np
import pytest

from tpu_imac_sim.defaults import DEFAULT_EPOCHS_STEP2, DEFAULT_LEARNING_RATE, DEFAULT_SEED
from tpu_imac_sim.exceptions import (
    ConfigError,
    FormatError,
    ManifestMismatchError,
    StateError,
    TrainingDivergedError,
)
from tpu_imac_sim.imac import CrossbarConfig, TernaryMatrix, reference_logits
from tpu_imac_sim.mptrain import (
    Backend,
    LabeledDataset,
    Phase,
    TrainHyper,
    evaluate,
    export_weights,
    init_state,
    load_exported,
    load_mnist,
    predict,
    read_manifest,
    sign_binarize,
    ternarize,
    train_step1,
    train_step2,
)
from tpu_imac_sim.mptrain import layers as L
from tpu_imac_sim.mptrain.export import check_manifest, read_tensor, write_tensor
from tpu_imac_sim.mptrain.network import build_features, build_network
from tpu_imac_sim.mptrain.quantize import ternary_threshold
from tpu_imac_sim.topology import bundled_topology, parse_topology


def test_sign_binarize_maps_zero_to_plus_one():
    np.testing.assert_array_equal(sign_binarize([-0.5, 0.0, 2.0]), [-1, 1, 1])
    assert sign_binarize(np.zeros(3)).dtype == np.int8


def test_ternarize_threshold():
    w = np.array([[1.0, -1.0, 0.1, -0.1]])
    assert ternary_threshold(w) == pytest.approx(0.7 * 0.55)
    assert ternarize(w) == TernaryMatrix([[1, -1, 0, 0]])
    assert ternarize(np.zeros((2, 2))) == TernaryMatrix.zeros(2, 2)


def test_ternarize_ignores_positive_scale():
    rng = np.random.default_rng(6)
    w = rng.normal(size=(12, 20))
    for alpha in (0.25, 3.0, 1024.0):
        assert ternarize(alpha * w) == ternarize(w)


def _check_gradients(layer, x, rng, eps=1e-6, samples=12):
    """Compare analytic gradients of ``sum(layer(x) * r)`` with central differences."""
    r = rng.normal(size=layer.forward(x).shape)
    dx = layer.backward(r)
    grads = {k: g.copy() for k, g in layer.grads().items()}

    def loss():
        return float(np.sum(layer.forward(x) * r))

    targets = [("x", x, dx)] + [(k, p, grads[k]) for k, p in layer.params().items()]
    for _, arr, analytic in targets:
        for flat in rng.choice(arr.size, size=min(samples, arr.size), replace=False):
            idx = np.unravel_index(flat, arr.shape)
            saved = arr[idx]
            arr[idx] = saved + eps
            up = loss()
            arr[idx] = saved - eps
            down = loss()
            arr[idx] = saved
            assert analytic[idx] == pytest.approx((up - down) / (2 * eps), rel=1e-4, abs=1e-6)


@pytest.mark.parametrize(
    "make_layer, x_shape",
    [
        (lambda rng: L.Conv2D("c", rng.normal(size=(3, 3, 2, 4)), rng.normal(size=4), 2), (2, 7, 7, 2)),
        (lambda rng: L.DepthwiseConv2D("d", rng.normal(size=(3, 3, 3)), rng.normal(size=3)), (2, 5, 5, 3)),
        (lambda rng: L.MaxPool2D("m", (2, 2), 2), (2, 4, 4, 3)),
        (lambda rng: L.AvgPool2D("a", (2, 2), 1), (2, 4, 4, 3)),
        (lambda rng: L.ZeroPad("p", 1, 2), (2, 3, 3, 2)),
        (lambda rng: L.Dense("f", rng.normal(size=(5, 6))), (3, 6)),
        (lambda rng: L.Sigmoid("s", 2.0), (3, 6)),
        (lambda rng: L.Tanh("t"), (3, 6)),
    ],
    ids=["conv", "depthwise", "maxpool", "avgpool", "pad", "dense", "sigmoid", "tanh"],
)
def test_layer_gradients(make_layer, x_shape):
    rng = np.random.default_rng(0)
    layer = make_layer(rng)
    _check_gradients(layer, rng.normal(size=x_shape), rng)


def test_softmax_cross_entropy_gradient():
    rng = np.random.default_rng(1)
    logits = rng.normal(size=(4, 10))
    labels = np.array([0, 3, 9, 3])
    _, grad = L.softmax_cross_entropy(logits, labels)
    eps = 1e-6
    for i, j in [(0, 0), (1, 3), (2, 5), (3, 9)]:
        up, down = logits.copy(), logits.copy()
        up[i, j] += eps
        down[i, j] -= eps
        numeric = (
            L.softmax_cross_entropy(up, labels)[0] - L.softmax_cross_entropy(down, labels)[0]
        ) / (2 * eps)
        assert grad[i, j] == pytest.approx(numeric, rel=1e-4, abs=1e-8)


def test_straight_through_estimators():
    rng = np.random.default_rng(2)
    weight = rng.normal(size=(4, 6))
    dense = L.TernaryDense("t", weight)
    x = rng.normal(size=(3, 6))
    out = dense.forward(x)
    np.testing.assert_allclose(out, x @ ternarize(weight).values.T)
    grad = rng.normal(size=out.shape)
    dx = dense.backward(grad)
    np.testing.assert_allclose(dense.grads()["weight"], grad.T @ x)
    np.testing.assert_allclose(dx, grad @ ternarize(weight).values)

    sign = L.SignSTE("s")
    u = np.array([[-2.0, -0.5, 0.0, 0.5, 2.0]])
    np.testing.assert_array_equal(sign.forward(u), [[-1, -1, 1, 1, 1]])
    np.testing.assert_array_equal(sign.backward(np.ones_like(u)), [[0, 1, 1, 1, 0]])


def test_last_feature_layer_has_no_relu(tiny_topology):
    state = init_state(tiny_topology, (8, 8, 1), TrainHyper())
    names = [layer.name for layer in build_features(tiny_topology, state.conv_weights, (8, 8, 1))]
    assert names == ["conv1", "flatten"]
    net = build_network(
        tiny_topology, state.conv_weights, state.fc_shadow_weights, (8, 8, 1), Phase.STEP2
    )
    assert isinstance(net.boundary, L.SignSTE)
    assert [type(layer).__name__ for layer in net.head] == [
        "TernaryDense", "Sigmoid", "TernaryDense",
    ]


def test_padded_topology_inserts_zero_pad():
    topology = parse_topology(
        "name,ifmap_h,ifmap_w,filter_h,filter_w,channels_in,num_filters,stride,kind\n"
        "conv1,10,10,3,3,1,2,1,Conv\n"
        "conv2,10,10,3,3,2,2,1,Conv\n"
        "fc,1,1,1,1,128,10,1,Dense\n"
    )
    state = init_state(topology, (10, 10, 1), TrainHyper())
    features = build_features(topology, state.conv_weights, (10, 10, 1))
    assert [layer.name for layer in features] == [
        "conv1", "conv1.relu", "conv2.pad", "conv2", "_flatten",
    ]
    assert state.boundary(np.zeros((2, 10, 10, 1))).shape == (2, 128)


def test_hyper_validation():
    with pytest.raises(ConfigError):
        TrainHyper(epochs=0)
    with pytest.raises(ConfigError):
        TrainHyper(learning_rate=0.0)


def test_two_step_training(tiny_topology, synthetic_data):
    hyper = TrainHyper(learning_rate=0.05, epochs=5, batch_size=32, seed=5)
    step1 = train_step1(tiny_topology, synthetic_data, hyper)
    assert step1.phase is Phase.STEP1
    assert step1.loss_history[-1] < step1.loss_history[0]
    assert evaluate(step1, synthetic_data) > 0.4

    conv_before = step1.conv_checksum()
    shadow_before = {k: w.copy() for k, w in step1.fc_shadow_weights.items()}
    step2 = train_step2(step1, synthetic_data)
    assert step2.phase is Phase.STEP2
    assert step2.conv_checksum() == conv_before
    assert step1.conv_checksum() == conv_before
    for name, w in shadow_before.items():
        np.testing.assert_array_equal(step1.fc_shadow_weights[name], w)
        assert step2.fc_ternary[name] == ternarize(step2.fc_shadow_weights[name])
    assert 0.0 <= evaluate(step2, synthetic_data) <= 1.0

    with pytest.raises(StateError):
        train_step2(step2, synthetic_data)


def test_training_is_deterministic(tiny_topology, synthetic_data, fast_hyper):
    a = train_step1(tiny_topology, synthetic_data, fast_hyper)
    b = train_step1(tiny_topology, synthetic_data, fast_hyper)
    assert a.conv_checksum() == b.conv_checksum()
    assert a.loss_history == b.loss_history


def test_checkpoints_see_current_ternary_weights(tiny_topology, synthetic_data, fast_hyper):
    step1 = train_step1(tiny_topology, synthetic_data, fast_hyper)
    seen = []

    def on_checkpoint(state):
        seen.append({k: m == ternarize(state.fc_shadow_weights[k]) for k, m in state.fc_ternary.items()})

    train_step2(step1, synthetic_data, on_checkpoint=on_checkpoint)
    assert len(seen) == fast_hyper.epochs
    assert all(all(flags.values()) for flags in seen)


def test_divergence_is_reported(tiny_topology, synthetic_data, fast_hyper):
    images = synthetic_data.images.copy()
    images[0, 0, 0, 0] = np.nan
    poisoned = LabeledDataset(images, synthetic_data.labels)
    with pytest.raises(TrainingDivergedError):
        train_step1(tiny_topology, poisoned, fast_hyper)


def test_relu_propagates_nan():
    out = L.ReLU("act").forward(np.array([-1.0, np.nan, 2.0]))
    assert out[0] == 0.0
    assert np.isnan(out[1])
    assert out[2] == 2.0


def test_optimizer_spots_non_finite_weights():
    dense = L.Dense("fc", np.ones((2, 3)))
    optimizer = L.SGD([dense], lr=0.1)
    assert optimizer.params_finite()
    dense.weight[0, 0] = np.inf
    assert not optimizer.params_finite()


def test_backends_agree_without_variation(tiny_topology, synthetic_data, fast_hyper):
    step2 = train_step2(train_step1(tiny_topology, synthetic_data, fast_hyper), synthetic_data)
    cfg = CrossbarConfig()
    digital = predict(step2, synthetic_data, Backend.DIGITAL, cfg)
    analog = predict(step2, synthetic_data, Backend.ANALOG, cfg, seed=1)
    np.testing.assert_array_equal(digital, analog)
    sharded = predict(step2, synthetic_data, Backend.ANALOG, cfg, seed=1, workers=3)
    np.testing.assert_array_equal(sharded, analog)

    noisy = CrossbarConfig(variation_sigma=0.05)
    a = evaluate(step2, synthetic_data, Backend.ANALOG, noisy, seed=9)
    b = evaluate(step2, synthetic_data, Backend.ANALOG, noisy, seed=9)
    assert a == b


def test_step2_predictions_follow_preactivations(tiny_topology, synthetic_data, fast_hyper):
    step2 = train_step2(train_step1(tiny_topology, synthetic_data, fast_hyper), synthetic_data)
    cfg = CrossbarConfig()
    bits = sign_binarize(step2.boundary(synthetic_data.images))
    logits = reference_logits(step2.fc_layers(), bits, cfg)
    expected = np.argmax(logits, axis=1)
    np.testing.assert_array_equal(predict(step2, synthetic_data, Backend.DIGITAL, cfg), expected)
    np.testing.assert_array_equal(
        predict(step2, synthetic_data, Backend.ANALOG, cfg, seed=3), expected
    )
    exact = float(np.mean(expected == synthetic_data.labels))
    assert evaluate(step2, synthetic_data, Backend.DIGITAL, cfg) == exact


def test_analog_backend_requirements(tiny_topology, synthetic_data, fast_hyper):
    step1 = train_step1(tiny_topology, synthetic_data, fast_hyper)
    with pytest.raises(ConfigError):
        evaluate(step1, synthetic_data, Backend.ANALOG)
    with pytest.raises(StateError):
        evaluate(step1, synthetic_data, Backend.ANALOG, CrossbarConfig())


def test_export_and_reload(tmp_path, tiny_topology, synthetic_data, fast_hyper):
    step1 = train_step1(tiny_topology, synthetic_data, fast_hyper)
    with pytest.raises(StateError):
        export_weights(step1, tmp_path)
    step2 = train_step2(step1, synthetic_data)
    written = export_weights(step2, tmp_path, accuracy_step1=0.9, accuracy_step2=0.88)
    assert written[-1].name == "manifest.txt"

    manifest = read_manifest(tmp_path)
    assert manifest.topology == "tiny_synth"
    assert manifest.accuracy_step2 == pytest.approx(0.88)
    assert [(e.layer, e.rows, e.cols) for e in manifest.dense_entries()] == [
        ("fc1", 16, 144), ("fc2", 10, 16),
    ]

    reloaded = load_exported(tmp_path, tiny_topology)
    assert reloaded.phase is Phase.STEP2
    for name, matrix in step2.fc_ternary.items():
        assert reloaded.fc_ternary[name] == matrix
    np.testing.assert_allclose(
        reloaded.conv_weights["conv1"]["weight"], step2.conv_weights["conv1"]["weight"], rtol=1e-6
    )


def test_export_is_deterministic(tmp_path, tiny_topology, synthetic_data, fast_hyper):
    contents = []
    for run in ("a", "b"):
        state = train_step2(train_step1(tiny_topology, synthetic_data, fast_hyper), synthetic_data)
        export_weights(state, tmp_path / run)
        contents.append({p.name: p.read_bytes() for p in sorted((tmp_path / run).iterdir())})
    assert contents[0] == contents[1]


def test_manifest_must_match_topology(tmp_path, tiny_topology):
    (tmp_path / "manifest.txt").write_text("# topology lenet_mnist\nfc1 Dense 32 1024 fc1.tern\n")
    with pytest.raises(ManifestMismatchError):
        check_manifest(read_manifest(tmp_path), tiny_topology)
    lenet = bundled_topology("lenet_mnist")
    with pytest.raises(ManifestMismatchError):
        check_manifest(read_manifest(tmp_path), lenet)


def test_tensor_file(tmp_path):
    arr = np.arange(24, dtype=np.float64).reshape(2, 3, 4)
    path = write_tensor(tmp_path / "t.f32", arr)
    assert path.stat().st_size == 8 * 4 + 4 * 24
    np.testing.assert_array_equal(read_tensor(path), arr)
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(FormatError):
        read_tensor(path)


def test_load_mnist_idx(idx_files):
    images_path, labels_path = idx_files
    data = load_mnist(images_path, labels_path)
    assert data.images.shape == (128, 8, 8, 1)
    assert data.images.dtype == np.float32
    assert 0.0 <= data.images.min() and data.images.max() <= 1.0
    with pytest.raises(FormatError, match="magic"):
        load_mnist(labels_path, labels_path)


def _mnist_file(directory, stem):
    for name in (stem, stem + ".gz"):
        if (directory / name).exists():
            return directory / name
    pytest.skip(f"{stem} not found in {directory}")


def test_mnist_two_step_accuracy(mnist_dir):
    train = load_mnist(
        _mnist_file(mnist_dir, "train-images-idx3-ubyte"),
        _mnist_file(mnist_dir, "train-labels-idx1-ubyte"),
    )
    test = load_mnist(
        _mnist_file(mnist_dir, "t10k-images-idx3-ubyte"),
        _mnist_file(mnist_dir, "t10k-labels-idx1-ubyte"),
    )
    lenet = bundled_topology("lenet_mnist")
    hyper1 = TrainHyper(seed=DEFAULT_SEED)
    hyper2 = replace(hyper1, learning_rate=DEFAULT_LEARNING_RATE, epochs=DEFAULT_EPOCHS_STEP2)
    step1 = train_step1(lenet, train, hyper1)
    accuracy1 = evaluate(step1, test)
    step2 = train_step2(step1, train, hyper2)
    cfg = CrossbarConfig()
    accuracy2 = evaluate(step2, test, xbar_cfg=cfg)
    assert accuracy1 >= 0.98
    assert accuracy1 - accuracy2 <= 0.02
    np.testing.assert_array_equal(
        predict(step2, test, Backend.ANALOG, cfg, seed=DEFAULT_SEED),
        predict(step2, test, Backend.DIGITAL, cfg),
    )
