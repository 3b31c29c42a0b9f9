#!/usr/bin/env python3
"""Regenerates the binary test fixtures under tests/fixtures/.

Usage: make_fixtures.py MNIST_5K_CSV_GZ OUT_DIR

The MNIST source is the 5000-sample subset shipped inside the mlxtend wheel
(mlxtend/data/data/mnist_5k.csv.gz: 784 pixel columns followed by the label).
The first 4000 rows train the models, the last 1000 are the held-out split
written as IDX files.

Outputs:
  mnist_mlp.gnw         flatten, dense(784->64), relu, dense(64->10), softmax
  small_cnn.gnw         conv/relu/maxpool stack on 28x28x1, 10 classes
  tiny_linear.gnw       2x2x1 input, dense(4->2), softmax, weights below
  mnist_test-images.idx / mnist_test-labels.idx   held-out split (1000)
  three-images.idx / three-labels.idx             3 synthetic 28x28 images
  gray2x2.pgm, color3x2.ppm, maxval15.pgm         PGM/PPM loader fixtures
  jpeg_ref.pgm + jpeg_ref_q{75,100}.pgm           Pillow round trips (grayscale)
  manifest.json         golden probability vectors per model
"""
import gzip
import hashlib
import io
import json
import struct
import sys

import numpy as np
import torch
from PIL import Image
from torch import nn

TAG_DENSE, TAG_CONV, TAG_RELU, TAG_MAXPOOL, TAG_FLATTEN, TAG_SOFTMAX = 1, 2, 3, 4, 5, 6


def write_gnw(path, input_shape, layers):
    """layers: list of (tag, shape_ints, weights_or_None, bias_or_None)."""
    out = bytearray(b"GNW1")
    out += struct.pack("<I", len(layers))
    out += struct.pack("<III", *input_shape)
    for tag, ints, w, b in layers:
        out += struct.pack("<B", tag)
        out += struct.pack("<%dI" % len(ints), *ints)
        if w is not None:
            out += np.ascontiguousarray(w, dtype="<f4").tobytes()
            out += np.ascontiguousarray(b, dtype="<f4").tobytes()
    with open(path, "wb") as f:
        f.write(out)
    return hashlib.sha256(out).hexdigest()


def write_idx(images_path, labels_path, images, labels):
    n, rows, cols = images.shape
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, rows, cols))
        f.write(images.astype(np.uint8).tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, n))
        f.write(labels.astype(np.uint8).tobytes())


def write_pnm(path, pixels, maxval=255):
    h, w = pixels.shape[:2]
    magic = b"P5" if pixels.ndim == 2 else b"P6"
    with open(path, "wb") as f:
        f.write(b"%s\n%d %d\n%d\n" % (magic, w, h, maxval))
        f.write(pixels.astype(np.uint8).tobytes())


def train(model, x, y, epochs, lr):
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    loss_fn = nn.CrossEntropyLoss()
    g = torch.Generator().manual_seed(1)
    for _ in range(epochs):
        perm = torch.randperm(len(x), generator=g)
        for i in range(0, len(x), 64):
            idx = perm[i:i + 64]
            opt.zero_grad()
            loss_fn(model(x[idx]), y[idx]).backward()
            opt.step()
    return model


def accuracy(model, x, y):
    with torch.no_grad():
        return float((model(x).argmax(1) == y).float().mean())


def main():
    src, out_dir = sys.argv[1], sys.argv[2]
    torch.manual_seed(0)
    data = np.loadtxt(gzip.open(src), delimiter=",").astype(np.float64)
    pixels, labels = data[:, :784].astype(np.uint8), data[:, 784].astype(np.int64)
    rng = np.random.default_rng(0)
    order = rng.permutation(len(labels))
    pixels, labels = pixels[order], labels[order]
    train_px, train_y = pixels[:4000], labels[:4000]
    test_px, test_y = pixels[4000:], labels[4000:]
    write_idx(f"{out_dir}/mnist_test-images.idx", f"{out_dir}/mnist_test-labels.idx",
              test_px.reshape(-1, 28, 28), test_y)

    # Inputs in [0,1]; HWC layout with C=1 equals the row-major 28x28 order.
    xtr = torch.tensor(train_px / 255.0, dtype=torch.float32)
    xte = torch.tensor(test_px / 255.0, dtype=torch.float32)
    ytr, yte = torch.tensor(train_y), torch.tensor(test_y)

    manifest = {}

    mlp = nn.Sequential(nn.Linear(784, 64), nn.ReLU(), nn.Linear(64, 10))
    train(mlp, xtr, ytr, epochs=30, lr=1e-3)
    acc = accuracy(mlp, xte, yte)
    l1, l2 = mlp[0], mlp[2]
    digest = write_gnw(f"{out_dir}/mnist_mlp.gnw", (28, 28, 1), [
        (TAG_FLATTEN, [], None, None),
        (TAG_DENSE, [784, 64], l1.weight.detach().numpy(), l1.bias.detach().numpy()),
        (TAG_RELU, [], None, None),
        (TAG_DENSE, [64, 10], l2.weight.detach().numpy(), l2.bias.detach().numpy()),
        (TAG_SOFTMAX, [], None, None),
    ])
    with torch.no_grad():
        golden = torch.softmax(mlp(xte[:1]), 1)[0].double().numpy()
    manifest["mnist_mlp"] = {
        "architecture": "flatten, dense(784->64), relu, dense(64->10), softmax",
        "test_accuracy": acc, "sha256": digest,
        "golden_input": "mnist_test-images.idx#0", "golden_probs": golden.tolist()}

    # Small CNN. Torch is NCHW; the GNW flatten walks HWC, so the dense
    # weights after flatten are permuted from (c, h, w) to (h, w, c) order.
    cnn = nn.Sequential(
        nn.Conv2d(1, 8, 3, stride=1, padding=1), nn.ReLU(), nn.MaxPool2d(2, 2),
        nn.Conv2d(8, 12, 3, stride=2, padding=0), nn.ReLU(),
        nn.Flatten(), nn.Linear(12 * 6 * 6, 10))
    xtr4, xte4 = xtr.view(-1, 1, 28, 28), xte.view(-1, 1, 28, 28)
    train(cnn, xtr4, ytr, epochs=8, lr=2e-3)
    cacc = accuracy(cnn, xte4, yte)
    c1, c2, fc = cnn[0], cnn[3], cnn[6]
    fc_w = fc.weight.detach().numpy().reshape(10, 12, 6, 6).transpose(0, 2, 3, 1).reshape(10, -1)
    cdigest = write_gnw(f"{out_dir}/small_cnn.gnw", (28, 28, 1), [
        (TAG_CONV, [3, 3, 1, 8, 1, 1], c1.weight.detach().numpy(), c1.bias.detach().numpy()),
        (TAG_RELU, [], None, None),
        (TAG_MAXPOOL, [2, 2], None, None),
        (TAG_CONV, [3, 3, 8, 12, 2, 0], c2.weight.detach().numpy(), c2.bias.detach().numpy()),
        (TAG_RELU, [], None, None),
        (TAG_FLATTEN, [], None, None),
        (TAG_DENSE, [432, 10], fc_w, fc.bias.detach().numpy()),
        (TAG_SOFTMAX, [], None, None),
    ])
    with torch.no_grad():
        cgolden = torch.softmax(cnn(xte4[:1]), 1)[0].double().numpy()
    manifest["small_cnn"] = {
        "architecture": "conv3x3(1->8,s1,same), relu, maxpool2, conv3x3(8->12,s2,valid), relu, "
                        "flatten, dense(432->10), softmax",
        "test_accuracy": cacc, "sha256": cdigest,
        "golden_input": "mnist_test-images.idx#0", "golden_probs": cgolden.tolist()}

    # tiny_linear: logits = W x + b on the flattened 2x2 image.
    w = np.array([[1.0, -1.0, 0.5, 0.0], [-1.0, 1.0, 0.0, 0.25]])
    b = np.array([0.2, -0.3])
    tdigest = write_gnw(f"{out_dir}/tiny_linear.gnw", (2, 2, 1), [
        (TAG_FLATTEN, [], None, None),
        (TAG_DENSE, [4, 2], w, b),
        (TAG_SOFTMAX, [], None, None),
    ])
    manifest["tiny_linear"] = {
        "architecture": "flatten, dense(4->2), softmax",
        "weights": w.tolist(), "bias": b.tolist(), "sha256": tdigest,
        "golden_input": "zeros", "golden_probs": (np.exp(b) / np.exp(b).sum()).tolist()}

    # Three synthetic 28x28 images; first pixels 0, 128, 255, labels 3, 1, 4.
    three = np.zeros((3, 28, 28), dtype=np.uint8)
    for i, first in enumerate([0, 128, 255]):
        three[i] = (np.arange(784).reshape(28, 28) * (i + 1)) % 256
        three[i, 0, 0] = first
    write_idx(f"{out_dir}/three-images.idx", f"{out_dir}/three-labels.idx",
              three, np.array([3, 1, 4]))

    write_pnm(f"{out_dir}/gray2x2.pgm", np.array([[0, 128], [255, 64]]))
    color = np.arange(18, dtype=np.uint8).reshape(2, 3, 3) * 14
    write_pnm(f"{out_dir}/color3x2.ppm", color)
    write_pnm(f"{out_dir}/maxval15.pgm", np.array([[0, 15], [7, 3]]), maxval=15)

    # JPEG references from libjpeg via Pillow (grayscale: no chroma path).
    ref = test_px[:4].reshape(4, 28, 28)
    ref = np.concatenate([np.concatenate([ref[0], ref[1]], 1),
                          np.concatenate([ref[2], ref[3]], 1)], 0)
    ref = ref[:, :50].copy()  # 56x50: exercises partial edge blocks
    write_pnm(f"{out_dir}/jpeg_ref.pgm", ref)
    for q in (75, 100):
        buf = io.BytesIO()
        Image.fromarray(ref, mode="L").save(buf, format="JPEG", quality=q)
        dec = np.array(Image.open(io.BytesIO(buf.getvalue())))
        write_pnm(f"{out_dir}/jpeg_ref_q{q}.pgm", dec)
    buf = io.BytesIO()
    Image.fromarray(ref, mode="L").save(buf, format="JPEG", quality=75)
    tables = Image.open(io.BytesIO(buf.getvalue())).quantization
    manifest["jpeg_q75_luma_table"] = list(tables[0])

    with open(f"{out_dir}/manifest.json", "w") as f:
        json.dump(manifest, f, indent=2)
    print(json.dumps({k: v.get("test_accuracy") for k, v in manifest.items()
                      if isinstance(v, dict)}))


if __name__ == "__main__":
    main()
