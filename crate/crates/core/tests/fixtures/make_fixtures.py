"""Regenerates the extractor and PPM fixtures with numpy and Pillow.

Run from this directory: python3 make_fixtures.py
"""

import struct

import numpy as np
from PIL import Image

ARCH = [(3, 16, 5, 2), (16, 32, 5, 2), (32, 64, 3, 2), (64, 64, 1, 1)]
MEAN = np.array([0.485, 0.456, 0.406])
STD = np.array([0.229, 0.224, 0.225])
RESOLUTION = 20
SEED = 7


def card(h, w):
    y, x = np.mgrid[0:h, 0:w]
    r = (x * 37 + y * 11) % 256
    g = (x * y + 3 * y) % 256
    b = (200 - 5 * x + 7 * y) % 256
    return np.stack([r, g, b], axis=-1).astype(np.uint8)


def resize(img, out):
    h, w, _ = img.shape
    res = np.zeros((out, out, img.shape[2]))
    for oy in range(out):
        sy = min(max((oy + 0.5) * h / out - 0.5, 0.0), h - 1)
        y0 = int(np.floor(sy))
        y1 = min(y0 + 1, h - 1)
        fy = sy - y0
        for ox in range(out):
            sx = min(max((ox + 0.5) * w / out - 0.5, 0.0), w - 1)
            x0 = int(np.floor(sx))
            x1 = min(x0 + 1, w - 1)
            fx = sx - x0
            res[oy, ox] = (
                (1 - fy) * (1 - fx) * img[y0, x0]
                + (1 - fy) * fx * img[y0, x1]
                + fy * (1 - fx) * img[y1, x0]
                + fy * fx * img[y1, x1]
            )
    return res


def conv(x, weight, bias, stride):
    cin, size, _ = x.shape
    cout, _, k, _ = weight.shape
    pad = k // 2
    out = (size + 2 * pad - k) // stride + 1
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    y = np.zeros((cout, out, out))
    for oy in range(out):
        for ox in range(out):
            patch = xp[:, oy * stride:oy * stride + k, ox * stride:ox * stride + k]
            y[:, oy, ox] = np.tensordot(weight, patch, axes=3) + bias
    return y


def forward(params, img):
    x = resize(img.astype(np.float64), RESOLUTION)
    x = ((x / 255.0 - MEAN) / STD).transpose(2, 0, 1)
    off = 0
    layers = []
    for cin, cout, k, _ in ARCH:
        n = cout * cin * k * k
        w = params[off:off + n].reshape(cout, cin, k, k).astype(np.float64)
        b = params[off + n:off + n + cout].astype(np.float64)
        layers.append((w, b))
        off += n + cout
    for (w, b), (_, _, _, s) in zip(layers[:3], ARCH[:3]):
        x = np.tanh(conv(x, w, b, s))
    pooled = x.mean(axis=(1, 2))
    w, b = layers[3]
    raw = w[:, :, 0, 0] @ pooled + b
    return raw / np.linalg.norm(raw)


def main():
    rng = np.random.default_rng(SEED)
    chunks = []
    for cin, cout, k, _ in ARCH:
        fan_in = cin * k * k
        chunks.append(rng.normal(0.0, np.sqrt(1.0 / fan_in), cout * fan_in))
        chunks.append(rng.normal(0.0, 0.05, cout))
    params = np.concatenate(chunks).astype(np.float32)

    with open("extractor.aixw", "wb") as f:
        f.write(b"AIXW")
        f.write(struct.pack("<IQII", 1, SEED, RESOLUTION, 64))
        f.write(struct.pack("<I", len(ARCH)))
        for layer in ARCH:
            f.write(struct.pack("<4I", *layer))
        f.write(struct.pack("<Q", params.size))
        f.write(params.tobytes())

    img = card(23, 31)
    Image.fromarray(img, "RGB").save("card.ppm")
    np.savetxt("card_feature.txt", forward(params, img), fmt="%.12e")


if __name__ == "__main__":
    main()
