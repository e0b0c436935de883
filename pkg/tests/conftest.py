import numpy as np
import pytest

from ftcurves import data, engine, model


def _away_from_relu_kinks(net, x, margin=1e-3):
    """Central differences misreport gradients when a ReLU input sits within
    the FD step of zero; reject such configurations."""
    _, cache = engine.network_forward(net, x)
    for kind, saved, _ in cache:
        if kind == "relu" and np.abs(saved).min() < margin:
            return False
    return True


def random_tiny_net(rng, classes=3, dtype=np.float64, max_convs=2):
    """Small random conv/ReLU stack ending in a 1x1 logits layer (<1k params)."""
    while True:
        h = w = int(rng.integers(4, 7))
        c = int(rng.integers(1, 3))
        layers = []
        cur_c, cur_h, cur_w = c, h, w
        for li in range(int(rng.integers(1, max_convs + 1))):
            k = int(rng.integers(1, min(3, cur_h, cur_w) + 1))
            stride = int(rng.integers(1, 3))
            padding = engine.SAME if rng.random() < 0.5 else engine.VALID
            co = int(rng.integers(1, 4))
            layer = engine.ConvLayer(
                kernel=rng.normal(0, 0.6, (co, cur_c, k, k)).astype(dtype),
                bias=rng.normal(0, 0.1, co).astype(dtype),
                stride=stride,
                padding=padding,
                name=f"c{li}",
            )
            layers.append(layer)
            layers.append(engine.ReluLayer())
            cur_h, cur_w = engine.conv_output_shape(cur_h, cur_w, layer)
            cur_c = co
        layers.append(
            engine.ConvLayer(
                kernel=rng.normal(0, 0.6, (classes, cur_c * cur_h * cur_w, 1, 1)).astype(dtype),
                bias=rng.normal(0, 0.1, classes).astype(dtype),
                stride=1,
                padding=engine.VALID,
                name="logits",
            )
        )
        net = engine.Network(layers, class_count=classes)
        x = rng.normal(0, 1, (2, c, h, w)).astype(dtype)
        labels = rng.integers(0, classes, size=2)
        if _away_from_relu_kinks(net, x):
            return net, x, labels


@pytest.fixture(scope="session")
def synth_train():
    raw = data.synthetic_digits(4000, seed=7)
    return data.prepare_dataset(raw)


@pytest.fixture(scope="session")
def synth_test():
    raw = data.synthetic_digits(1000, seed=8)
    return data.prepare_dataset(raw)


@pytest.fixture(scope="session")
def trained_net(synth_train):
    """Desk-scale model: 5 epochs on the synthetic digit set."""
    net = model.build_svhn_cnn(seed=3)
    cfg = engine.SgdConfig(
        epochs=5,
        class_weights=data.class_weights(synth_train.labels),
        seed=3,
    )
    engine.train(net, synth_train.images, synth_train.labels, cfg)
    return net
