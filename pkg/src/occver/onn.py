"""Occlusion networks: a ReLU prefix that maps an occlusion position to the occluded image.

For an image ``x`` of shape ``(m, n, c)`` the network takes
``(a, w, b, h, d+..., d-...)`` and is organised in four stages:

1. ``2(n + m)`` ladder neurons ``ReLU(a - i)``, ``ReLU(1 + i - a - w)`` for each
   column ``i`` and the same on the row axis with ``b``/``h``;
2. per-axis coverage ``ReLU(1 - lo_i - hi_i)`` for every column and row;
3. pixel masks ``ReLU(cov_i + cov_j - 1)``; for multiform colouring also two
   gate neurons per pixel value, ``ReLU(cov_i + cov_j + d - 2)``, which pass a
   non-negative delta ``d`` through exactly when the pixel is fully covered;
4. affine output ``x + (mu - x) * mask`` (uniform) or ``x + gate+ - gate-``.

Multiform deltas are fed as separate positive and negative magnitudes, each
bounded so that the occluded pixel stays inside [0, 1].  The delta inputs are
carried through stages 1-2 by identity ReLUs (exact because they are
non-negative).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .model import (AffineLayer, Network, concatenate, max_gadget_layer, save_network,
                    shift_network)
from .occlusion import Image, OcclusionSpec, Placement, Uniform


@dataclass(frozen=True)
class PositionRegion:
    a_lo: float
    a_hi: float
    b_lo: float
    b_hi: float

    def check(self, m: int, n: int):
        if not (1 <= self.a_lo <= self.a_hi <= n and 1 <= self.b_lo <= self.b_hi <= m):
            raise ValueError(f"region {self} outside [1, {n}] x [1, {m}]")

    @classmethod
    def full(cls, m: int, n: int) -> "PositionRegion":
        return cls(1.0, float(n), 1.0, float(m))

    def as_dict(self):
        return {"a": [self.a_lo, self.a_hi], "b": [self.b_lo, self.b_hi]}


@dataclass(frozen=True, eq=False)
class Box:
    """Per-input interval bounds plus integrality marks."""
    lo: np.ndarray
    hi: np.ndarray
    integer: np.ndarray = None

    def __post_init__(self):
        lo = np.array(self.lo, dtype=np.float64)
        hi = np.array(self.hi, dtype=np.float64)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("box bounds must be vectors of equal length")
        if np.any(lo > hi) or not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("box bounds must be finite with lo <= hi")
        integer = (np.zeros(lo.shape, dtype=bool) if self.integer is None
                   else np.array(self.integer, dtype=bool))
        for a in (lo, hi, integer):
            a.setflags(write=False)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "integer", integer)

    @property
    def dim(self) -> int:
        return self.lo.size

    def contains(self, v, tol: float = 0.0) -> bool:
        v = np.asarray(v, dtype=np.float64)
        if v.shape != self.lo.shape:
            return False
        if np.any(v < self.lo - tol) or np.any(v > self.hi + tol):
            return False
        iv = v[self.integer]
        return bool(np.all(iv == np.round(iv)))


@dataclass(frozen=True, eq=False)
class OnnBundle:
    onn: Network
    image: Image
    spec: OcclusionSpec
    input_layout: dict
    fixed_inputs: dict
    free_inputs: dict = field(default_factory=dict)

    @property
    def input_dim(self) -> int:
        return self.onn.input_dim

    @property
    def num_delta_inputs(self) -> int:
        return self.input_dim - 4


def build_onn(x: Image, spec: OcclusionSpec) -> OnnBundle:
    """Construct the occlusion network for image ``x`` and occlusion ``spec``."""
    m, n, c = x.m, x.n, x.c
    spec.check_fits(m, n, c)
    multi = not isinstance(spec.coloring, Uniform)
    npix = m * n
    nval = npix * c
    n_delta = 2 * nval if multi else 0
    n_in = 4 + n_delta
    A, W, B, H = 0, 1, 2, 3

    # stage 1: column ladders then row ladders, then delta pass-through
    s1 = 2 * (n + m)
    w1 = np.zeros((s1 + n_delta, n_in))
    b1 = np.zeros(s1 + n_delta)
    cols = np.arange(1, n + 1, dtype=np.float64)
    rows = np.arange(1, m + 1, dtype=np.float64)
    w1[0:n, A] = 1.0
    b1[0:n] = -cols
    w1[n:2 * n, A] = -1.0
    w1[n:2 * n, W] = -1.0
    b1[n:2 * n] = cols + 1.0
    o = 2 * n
    w1[o:o + m, B] = 1.0
    b1[o:o + m] = -rows
    w1[o + m:o + 2 * m, B] = -1.0
    w1[o + m:o + 2 * m, H] = -1.0
    b1[o + m:o + 2 * m] = rows + 1.0
    if multi:
        d = np.arange(n_delta)
        w1[s1 + d, 4 + d] = 1.0

    # stage 2: coverage per column, per row
    s2 = n + m
    w2 = np.zeros((s2 + n_delta, s1 + n_delta))
    b2 = np.zeros(s2 + n_delta)
    idx = np.arange(n)
    w2[idx, idx] = -1.0
    w2[idx, n + idx] = -1.0
    idx = np.arange(m)
    w2[n + idx, 2 * n + idx] = -1.0
    w2[n + idx, 2 * n + m + idx] = -1.0
    b2[:s2] = 1.0
    if multi:
        w2[s2 + d, s1 + d] = 1.0

    # stage 3: masks (column-major pixel order), then gates
    pix = np.arange(npix)
    col_of = pix // m          # 0-based column of each pixel
    row_of = pix % m           # 0-based row
    w3 = np.zeros((npix + n_delta, s2 + n_delta))
    b3 = np.zeros(npix + n_delta)
    w3[pix, col_of] = 1.0
    w3[pix, n + row_of] = 1.0
    b3[:npix] = -1.0
    if multi:
        val = np.arange(nval)
        pv = val // c          # pixel of each value
        for half in range(2):
            r = npix + half * nval + val
            w3[r, col_of[pv]] = 1.0
            w3[r, n + row_of[pv]] = 1.0
            w3[r, s2 + half * nval + val] = 1.0
            b3[r] = -2.0

    # stage 4: occluded image
    xf = x.flat()
    w4 = np.zeros((nval, npix + n_delta))
    val = np.arange(nval)
    if multi:
        w4[val, npix + val] = 1.0
        w4[val, npix + nval + val] = -1.0
    else:
        mu = np.array([spec.coloring.channel(k) for k in range(c)])
        w4[val, val // c] = mu[val % c] - xf
    for arr in (w1, w2, w3, w4):
        arr.setflags(write=False)  # freshly built, so the layers can share them
    onn = Network([AffineLayer(w1, b1), AffineLayer(w2, b2), AffineLayer(w3, b3),
                   AffineLayer(w4, xf.copy(), relu=False)])

    layout = {"a": A, "w": W, "b": B, "h": H}
    free = {}
    if multi:
        layout["delta_pos"] = (4, 4 + nval)
        layout["delta_neg"] = (4 + nval, 4 + 2 * nval)
        eps = spec.coloring.eps
        up = np.minimum(eps, 1.0 - xf)
        down = np.minimum(eps, xf)
        for k in range(nval):
            free[4 + k] = (0.0, float(up[k]))
            free[4 + nval + k] = (0.0, float(down[k]))
    return OnnBundle(onn=onn, image=x, spec=spec, input_layout=layout,
                     fixed_inputs={W: float(spec.w), H: float(spec.h)}, free_inputs=free)


def input_box(bundle: OnnBundle, region: PositionRegion) -> Box:
    x = bundle.image
    region.check(x.m, x.n)
    lo = np.zeros(bundle.input_dim)
    hi = np.zeros(bundle.input_dim)
    lay = bundle.input_layout
    lo[lay["a"]], hi[lay["a"]] = region.a_lo, region.a_hi
    lo[lay["b"]], hi[lay["b"]] = region.b_lo, region.b_hi
    for k, v in bundle.fixed_inputs.items():
        lo[k] = hi[k] = v
    for k, (l, u) in bundle.free_inputs.items():
        lo[k], hi[k] = l, u
    integer = np.zeros(bundle.input_dim, dtype=bool)
    if bundle.spec.positions == "int":
        integer[lay["a"]] = integer[lay["b"]] = True
        lo[lay["a"]], hi[lay["a"]] = np.ceil(region.a_lo), np.floor(region.a_hi)
        lo[lay["b"]], hi[lay["b"]] = np.ceil(region.b_lo), np.floor(region.b_hi)
        if lo[lay["a"]] > hi[lay["a"]] or lo[lay["b"]] > hi[lay["b"]]:
            raise ValueError(f"region {region} contains no integer position")
    return Box(lo, hi, integer)


def encode_placement(bundle: OnnBundle, placement: Placement) -> np.ndarray:
    """Network input reproducing ``placement`` (deltas clipped to the input bounds)."""
    theta = np.zeros(bundle.input_dim)
    lay = bundle.input_layout
    theta[lay["a"]] = placement.a
    theta[lay["b"]] = placement.b
    for k, v in bundle.fixed_inputs.items():
        theta[k] = v
    if "delta_pos" in lay and placement.deltas is not None:
        x = bundle.image
        d = np.asarray(placement.deltas, dtype=np.float64).reshape(x.m, x.n, x.c)
        flat = np.ascontiguousarray(d.transpose(1, 0, 2)).reshape(-1)
        p0, p1 = lay["delta_pos"]
        q0, q1 = lay["delta_neg"]
        ub_pos = np.array([bundle.free_inputs[k][1] for k in range(p0, p1)])
        ub_neg = np.array([bundle.free_inputs[k][1] for k in range(q0, q1)])
        theta[p0:p1] = np.minimum(np.maximum(flat, 0.0), ub_pos)
        theta[q0:q1] = np.minimum(np.maximum(-flat, 0.0), ub_neg)
    return theta


def decode_input(bundle: OnnBundle, theta) -> Placement:
    """Placement (with net per-pixel deltas) described by a network input."""
    theta = np.asarray(theta, dtype=np.float64)
    lay = bundle.input_layout
    deltas = None
    if "delta_pos" in lay:
        x = bundle.image
        p0, p1 = lay["delta_pos"]
        q0, q1 = lay["delta_neg"]
        net = theta[p0:p1] - theta[q0:q1]
        deltas = net.reshape(x.n, x.m, x.c).transpose(1, 0, 2).copy()
    return Placement(float(theta[lay["a"]]), float(theta[lay["b"]]), deltas)


def compose(bundle: OnnBundle, f: Network) -> Network:
    """Classifier applied to the occluded image, as one network over the occlusion inputs."""
    if bundle.onn.output_dim != f.input_dim:
        raise ValueError(
            f"classifier expects {f.input_dim} inputs but the image has {bundle.onn.output_dim} values")
    return concatenate(bundle.onn, f)


def export_composed(bundle: OnnBundle, f: Network, net_path, manifest_path,
                    region: PositionRegion | None = None):
    """Write the composed network (FNN text) and a JSON manifest describing its inputs."""
    composed = compose(bundle, f)
    with open(net_path, "w", encoding="utf-8") as fh:
        save_network(composed, fh)
    x = bundle.image
    region = region or PositionRegion.full(x.m, x.n)
    box = input_box(bundle, region)
    lay = {k: (list(v) if isinstance(v, tuple) else v) for k, v in bundle.input_layout.items()}
    manifest = {
        "input_layout": lay,
        "fixed_inputs": {str(k): v for k, v in sorted(bundle.fixed_inputs.items())},
        "free_inputs": {str(k): list(v) for k, v in sorted(bundle.free_inputs.items())},
        "region": region.as_dict(),
        "input_lower": box.lo.tolist(),
        "input_upper": box.hi.tolist(),
        "integer_inputs": np.flatnonzero(box.integer).tolist(),
        "image_shape": [x.m, x.n, x.c],
        "occlusion": {"w": bundle.spec.w, "h": bundle.spec.h,
                      "positions": bundle.spec.positions,
                      "coloring": coloring_dict(bundle.spec)},
    }
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
    return composed, manifest


def coloring_dict(spec: OcclusionSpec) -> dict:
    if isinstance(spec.coloring, Uniform):
        return {"mode": "uniform", "mu": list(spec.coloring.mu)}
    return {"mode": "multiform", "eps": spec.coloring.eps}


def onn_size(m: int, n: int, c: int, multiform: bool) -> int:
    """Number of ReLU neurons in an occlusion network for the given image shape."""
    n_delta = 2 * m * n * c if multiform else 0
    return 2 * (n + m) + (n + m) + m * n + 3 * n_delta


def compose_omnn(bundle: OnnBundle, f: Network, label: int, region: PositionRegion | None = None):
    """Single-query network ``(psi1, psi2) = (F_label, max of the other outputs)``.

    The logits are shifted by a constant that makes them non-negative over
    the region (the max gadget is exact only there), so robustness reduces
    to ``psi1 > psi2`` everywhere.  Returns ``(network, shift)``.
    """
    from .verifier.bounds import propagate_bounds

    composed = compose(bundle, f)
    x = bundle.image
    box = input_box(bundle, region or PositionRegion.full(x.m, x.n))
    low = float(np.min(propagate_bounds(composed, box).output_lower))
    shift = max(0.0, -low) + 1.0
    gadget = max_gadget_layer(f.output_dim, label)
    net = concatenate(concatenate(composed, shift_network(f.output_dim, shift)), gadget)
    return net, shift
