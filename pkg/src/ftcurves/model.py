"""The SVHN digit classifier under test: construction, prediction, margins, and
.ftm serialization (text header + raw little-endian float32 parameters)."""

from __future__ import annotations

import numpy as np

from . import engine
from .engine import ConvLayer, Network, ReluLayer, SAME, VALID

# (name, c_out, c_in, kh, kw, stride, padding); ReLU follows every row but the
# last. The terminal 1x1 layer consumes the flattened 64x2x2 map as 256
# channels, acting as the fully connected logits layer.
SVHN_CNN_ARCH = (
    ("Conv1", 32, 1, 8, 8, 2, SAME),
    ("Conv2", 64, 32, 6, 6, 2, VALID),
    ("Conv3", 64, 64, 5, 5, 1, VALID),
    ("Fc", 10, 256, 1, 1, 1, VALID),
)

SVHN_CNN_PARAM_TOTAL = 180_906


class ModelFormatError(ValueError):
    """Malformed .ftm model file."""


def build_svhn_cnn(seed: int = 0, sigma: float = 0.05, dtype=np.float32) -> Network:
    """All-convolutional 32x32 greyscale digit classifier with 180,906 parameters."""
    layers = []
    for i, (name, co, ci, kh, kw, stride, padding) in enumerate(SVHN_CNN_ARCH):
        layers.append(
            ConvLayer(
                kernel=np.empty((co, ci, kh, kw), dtype=dtype),
                bias=np.empty(co, dtype=dtype),
                stride=stride,
                padding=padding,
                name=name,
            )
        )
        if i < len(SVHN_CNN_ARCH) - 1:
            layers.append(ReluLayer())
    net = Network(layers, class_count=10, seed=seed)
    engine.init_gaussian(net, sigma, seed)
    return net


def param_count(net: Network) -> int:
    return net.param_count


def predict(net: Network, x_batch: np.ndarray, chunk: int = 512):
    """Argmax labels and softmax rows for a batch of standardized images.

    Ties break to the lowest class index.
    """
    parts = []
    for start in range(0, x_batch.shape[0], chunk):
        logits = engine.forward(net, x_batch[start : start + chunk])
        parts.append(engine.softmax(logits))
    probs = np.concatenate(parts, axis=0)
    return probs.argmax(axis=1), probs


def margin(softmax_row: np.ndarray) -> float:
    """Top softmax probability minus the second highest; 1 means full confidence."""
    row = np.asarray(softmax_row, dtype=np.float64).ravel()
    if row.size < 2:
        raise ValueError("margin needs at least 2 classes")
    top2 = np.partition(row, -2)[-2:]
    return float(top2[1] - top2[0])


def margins(probs: np.ndarray) -> np.ndarray:
    """Row-wise prediction margins."""
    top2 = np.partition(np.asarray(probs, dtype=np.float64), -2, axis=1)[:, -2:]
    return top2[:, 1] - top2[:, 0]


# Stopping threshold for "fully confident" in float32 arithmetic, where an
# exact margin of 1.0 is unreachable.
FULL_CONFIDENCE_MARGIN = 0.999


def save_model(net: Network, path) -> None:
    """Write the .ftm format: ASCII header through 'end', then every conv
    layer's kernel (row-major) and bias as little-endian float32, in layer
    order."""
    lines = ["FTM1"]
    lines.append(f"class_count {net.class_count}")
    lines.append(f"seed {net.seed}")
    lines.append(f"epochs {net.epochs_trained}")
    lines.append(f"layers {len(net.layers)}")
    for layer in net.layers:
        if isinstance(layer, ReluLayer):
            lines.append("relu")
        else:
            co, ci, kh, kw = layer.kernel.shape
            lines.append(
                f"conv {layer.name} {co} {ci} {kh} {kw} {layer.stride} {layer.padding}"
            )
    lines.append("end")
    header = ("\n".join(lines) + "\n").encode("ascii")
    blobs = []
    for layer in net.conv_layers():
        blobs.append(layer.kernel.astype("<f4").tobytes())
        blobs.append(layer.bias.astype("<f4").tobytes())
    with open(path, "wb") as f:
        f.write(header)
        for b in blobs:
            f.write(b)


def load_model(path) -> Network:
    with open(path, "rb") as f:
        raw = f.read()
    end_marker = b"\nend\n"
    pos = raw.find(end_marker)
    if not raw.startswith(b"FTM1\n") or pos < 0:
        raise ModelFormatError(f"{path}: not an .ftm model file")
    header = raw[: pos + 1].decode("ascii").splitlines()
    payload = raw[pos + len(end_marker) :]

    fields = {}
    specs = []
    for line in header[1:]:
        parts = line.split()
        if parts[0] == "conv":
            if len(parts) != 8:
                raise ModelFormatError(f"bad conv line: {line!r}")
            specs.append(parts)
        elif parts[0] == "relu":
            specs.append(parts)
        elif len(parts) == 2:
            fields[parts[0]] = parts[1]
        else:
            raise ModelFormatError(f"bad header line: {line!r}")
    try:
        class_count = int(fields["class_count"])
        seed = int(fields["seed"])
        epochs = int(fields["epochs"])
        layer_count = int(fields["layers"])
    except (KeyError, ValueError) as exc:
        raise ModelFormatError(f"missing or bad header field: {exc}") from exc
    if layer_count != len(specs):
        raise ModelFormatError(f"header declares {layer_count} layers, found {len(specs)}")

    layers = []
    offset = 0
    for parts in specs:
        if parts[0] == "relu":
            layers.append(ReluLayer())
            continue
        _, name, co, ci, kh, kw, stride, padding = parts
        co, ci, kh, kw, stride = int(co), int(ci), int(kh), int(kw), int(stride)
        if padding not in (SAME, VALID):
            raise ModelFormatError(f"unknown padding {padding!r}")
        ksize = co * ci * kh * kw * 4
        bsize = co * 4
        if offset + ksize + bsize > len(payload):
            raise ModelFormatError("parameter payload truncated")
        kernel = np.frombuffer(payload, dtype="<f4", count=co * ci * kh * kw, offset=offset)
        offset += ksize
        bias = np.frombuffer(payload, dtype="<f4", count=co, offset=offset)
        offset += bsize
        layers.append(
            ConvLayer(
                kernel=kernel.reshape(co, ci, kh, kw).copy(),
                bias=bias.copy(),
                stride=stride,
                padding=padding,
                name=name,
            )
        )
    if offset != len(payload):
        raise ModelFormatError(
            f"parameter payload has {len(payload) - offset} trailing bytes"
        )
    return Network(layers, class_count=class_count, seed=seed, epochs_trained=epochs)
