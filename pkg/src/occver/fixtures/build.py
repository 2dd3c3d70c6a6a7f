"""Deterministic generator for the bundled fixtures.

Run ``python3 -m occver.fixtures.build [outdir]``.  Produces:

* ``example.img``: the 2x2 grayscale example image;
* ``tiny_const.fnn``: 16-8-8-3 network whose output ignores its input;
* ``tiny_sum.fnn``: 4-4-2 network, label 1 wins once enough brightness is removed;
* ``tiny_quad.fnn`` / ``quad_*.img``: 16-16-10-3 network trained on 4x4 quadrant patterns;
* ``desk_shapes.fnn`` / ``shape_*.img``: 64-120-100-80-4 network (300 ReLUs)
  trained on 8x8 bar/diagonal/square drawings, with ten held-out images.
"""
from __future__ import annotations

import json
import os
import sys

import numpy as np

from ..imageio import save_image
from ..model import Network, classify, save_network
from ..occlusion import Image
from . import HERE


def _shapes(rng, count, size=8):
    """Noisy line drawings of four classes: vertical, horizontal, diagonal, square."""
    xs = np.empty((count, size, size))
    ys = rng.integers(0, 4, size=count)
    for t in range(count):
        img = rng.uniform(0.0, 0.25, size=(size, size))
        ink = rng.uniform(0.7, 1.0)
        k = ys[t]
        if k == 0:
            col = rng.integers(1, size - 1)
            top, bot = sorted(rng.choice(np.arange(size + 1), 2, replace=False))
            bot = max(bot, top + 4)
            img[top:bot, col] = ink
        elif k == 1:
            row = rng.integers(1, size - 1)
            lft, rgt = sorted(rng.choice(np.arange(size + 1), 2, replace=False))
            rgt = max(rgt, lft + 4)
            img[row, lft:rgt] = ink
        elif k == 2:
            off = rng.integers(-2, 3)
            for i in range(size):
                if 0 <= i + off < size:
                    img[i, i + off] = ink
            if rng.random() < 0.5:
                img = img[:, ::-1]
        else:
            s = rng.integers(3, 6)
            r0, c0 = rng.integers(0, size - s + 1, size=2)
            img[r0, c0:c0 + s] = img[r0 + s - 1, c0:c0 + s] = ink
            img[r0:r0 + s, c0] = img[r0:r0 + s, c0 + s - 1] = ink
        xs[t] = np.clip(img, 0.0, 1.0)
    return xs, ys


def _flat(batch):
    # network input order is column-major over pixels
    return batch.transpose(0, 2, 1).reshape(len(batch), -1)


def train_mlp(x, y, sizes, rng, epochs=300, lr=3e-3, batch=128):
    """Cross-entropy MLP trained with Adam; returns weight and bias lists."""
    ws = [rng.normal(size=(sizes[t + 1], sizes[t])) * np.sqrt(2.0 / sizes[t])
          for t in range(len(sizes) - 1)]
    bs = [np.zeros(sizes[t + 1]) for t in range(len(sizes) - 1)]
    params = ws + bs
    m1 = [np.zeros_like(p) for p in params]
    m2 = [np.zeros_like(p) for p in params]
    step = 0
    n = len(x)
    for _ in range(epochs):
        order = rng.permutation(n)
        for s in range(0, n, batch):
            idx = order[s:s + batch]
            acts = [x[idx]]
            for t in range(len(ws)):
                z = acts[-1] @ ws[t].T + bs[t]
                acts.append(np.maximum(z, 0.0) if t < len(ws) - 1 else z)
            logits = acts[-1]
            p = np.exp(logits - logits.max(axis=1, keepdims=True))
            p /= p.sum(axis=1, keepdims=True)
            p[np.arange(len(idx)), y[idx]] -= 1.0
            g = p / len(idx)
            gw, gb = [None] * len(ws), [None] * len(ws)
            for t in range(len(ws) - 1, -1, -1):
                gw[t] = g.T @ acts[t]
                gb[t] = g.sum(axis=0)
                if t:
                    g = (g @ ws[t]) * (acts[t] > 0.0)
            step += 1
            for k, gr in enumerate(gw + gb):
                m1[k] = 0.9 * m1[k] + 0.1 * gr
                m2[k] = 0.999 * m2[k] + 0.001 * gr * gr
                upd = lr * (m1[k] / (1 - 0.9 ** step)) / (np.sqrt(m2[k] / (1 - 0.999 ** step)) + 1e-8)
                params[k] -= upd
    return ws, bs


def _accuracy(net, x, y):
    return float(np.mean([classify(net, v) == t for v, t in zip(x, y)]))


def build(outdir=HERE):
    os.makedirs(outdir, exist_ok=True)
    meta = {}

    def put_net(name, net):
        with open(os.path.join(outdir, f"{name}.fnn"), "w", encoding="utf-8") as fh:
            save_network(net, fh)

    def put_img(name, img):
        save_image(img, os.path.join(outdir, f"{name}.img"))

    put_img("example", Image(np.array([[0.4, 0.55], [0.6, 0.72]])))

    const = Network.from_arrays(
        [np.zeros((8, 16)), np.zeros((8, 8)), np.zeros((3, 8))],
        [np.zeros(8), np.zeros(8), np.array([0.1, 0.7, 0.2])])
    put_net("tiny_const", const)

    # y0 = total brightness, y1 = 1.8: removing a pixel brighter than 0.47 flips the example image
    put_net("tiny_sum", Network.from_arrays(
        [np.eye(4), np.vstack([np.ones(4), np.zeros(4)])],
        [np.zeros(4), np.array([0.0, 1.8])]))

    rng = np.random.default_rng(20240601)
    # 4x4 quadrant patterns: which of top-left, bottom-right or neither is bright
    qx = rng.uniform(0.0, 0.4, size=(3000, 4, 4))
    qy = rng.integers(0, 3, size=3000)
    qx[qy == 0, :2, :2] += 0.5
    qx[qy == 1, 2:, 2:] += 0.5
    qx = np.clip(qx, 0.0, 1.0)
    ws, bs = train_mlp(_flat(qx), qy, [16, 16, 10, 3], rng, epochs=60)
    quad = Network.from_arrays(ws, bs)
    put_net("tiny_quad", quad)
    tx = rng.uniform(0.0, 0.4, size=(3, 4, 4))
    tx[0, :2, :2] += 0.5
    tx[1, 2:, 2:] += 0.5
    for k in range(3):
        put_img(f"quad_{k}", Image(np.clip(tx[k], 0.0, 1.0)))
    meta["tiny_quad"] = {"train_accuracy": _accuracy(quad, _flat(qx), qy)}

    sx, sy = _shapes(rng, 6000)
    ws, bs = train_mlp(_flat(sx), sy, [64, 120, 100, 80, 4], rng, epochs=40)
    desk = Network.from_arrays(ws, bs)
    put_net("desk_shapes", desk)
    vx, vy = _shapes(rng, 400)
    meta["desk_shapes"] = {"train_accuracy": _accuracy(desk, _flat(sx), sy),
                           "test_accuracy": _accuracy(desk, _flat(vx), vy)}
    picked = []
    for v, t in zip(vx, vy):
        if classify(desk, _flat(v[None])[0]) == t and sum(pt == t for _, pt in picked) < 3:
            picked.append((v, int(t)))
        if len(picked) == 10:
            break
    for k, (v, t) in enumerate(picked):
        put_img(f"shape_{k}", Image(v))
    meta["desk_shapes"]["image_labels"] = [t for _, t in picked]
    with open(os.path.join(outdir, "fixtures.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
    return meta


if __name__ == "__main__":
    print(json.dumps(build(*sys.argv[1:]), indent=2))
