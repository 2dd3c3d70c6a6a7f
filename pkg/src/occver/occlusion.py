"""Reference occlusion function for rectangular occlusions.

This is the ground truth the occlusion network is checked against, so it is
written directly from the pixel-level definitions and shares no code with
:mod:`occver.onn`.

Axis convention: ``i`` indexes columns (``1..n``, the width axis, position
``a``) and ``j`` indexes rows (``1..m``, the height axis, position ``b``).
Pixel arrays are stored as ``(m, n, c)``; the vector fed to a network lists
pixels column by column (``i`` outer, ``j`` inner) with channels innermost,
see :meth:`Image.flat`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence, Union

import numpy as np


@dataclass(frozen=True, eq=False)
class Image:
    pixels: np.ndarray  # (m, n, c), values in [0, 1]

    def __post_init__(self):
        p = np.array(self.pixels, dtype=np.float64, copy=True)
        if p.ndim == 2:
            p = p[:, :, None]
        if p.ndim != 3 or p.shape[2] not in (1, 3):
            raise ValueError(f"image must have shape (m, n) or (m, n, 1|3), got {p.shape}")
        if p.size and (p.min() < 0.0 or p.max() > 1.0):
            raise ValueError("pixel values must lie in [0, 1]")
        p.setflags(write=False)
        object.__setattr__(self, "pixels", p)

    @property
    def m(self) -> int:
        return self.pixels.shape[0]

    @property
    def n(self) -> int:
        return self.pixels.shape[1]

    @property
    def c(self) -> int:
        return self.pixels.shape[2]

    @property
    def shape(self):
        return self.pixels.shape

    def at(self, i: int, j: int, k: int = 0) -> float:
        """Pixel at column ``i`` and row ``j`` (both 1-based)."""
        return float(self.pixels[j - 1, i - 1, k])

    def flat(self) -> np.ndarray:
        """Network input vector: column-major over pixels, channels innermost."""
        return np.ascontiguousarray(self.pixels.transpose(1, 0, 2)).reshape(-1)

    @classmethod
    def from_flat(cls, vec, m: int, n: int, c: int = 1, clip: bool = False) -> "Image":
        v = np.asarray(vec, dtype=np.float64)
        if v.size != m * n * c:
            raise ValueError(f"expected {m * n * c} values, got {v.size}")
        if clip:
            v = np.clip(v, 0.0, 1.0)
        return cls(v.reshape(n, m, c).transpose(1, 0, 2))


def flat_index(i: int, j: int, k: int, m: int, c: int) -> int:
    """Position of pixel (column i, row j, channel k) in :meth:`Image.flat`."""
    return ((i - 1) * m + (j - 1)) * c + k


@dataclass(frozen=True)
class Uniform:
    """Every occluded pixel takes colour ``mu`` (one value per channel)."""
    mu: tuple

    def __init__(self, mu: Union[float, Sequence[float]]):
        vals = (float(mu),) if np.isscalar(mu) else tuple(float(v) for v in mu)
        if not vals or any(not 0.0 <= v <= 1.0 for v in vals):
            raise ValueError("uniform colour must lie in [0, 1]")
        object.__setattr__(self, "mu", vals)

    def channel(self, k: int) -> float:
        return self.mu[k] if len(self.mu) > 1 else self.mu[0]


@dataclass(frozen=True)
class Multiform:
    """Each occluded pixel may move by an independent delta in ``[-eps, eps]``."""
    eps: float

    def __post_init__(self):
        if not 0.0 < self.eps <= 1.0:
            raise ValueError("multiform eps must lie in (0, 1]")


Coloring = Union[Uniform, Multiform]


@dataclass(frozen=True)
class OcclusionSpec:
    w: int
    h: int
    coloring: Coloring = field(default_factory=lambda: Uniform(0.0))
    positions: str = "int"  # "int" or "real"

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise ValueError("occlusion width and height must be at least 1")
        if self.positions not in ("int", "real"):
            raise ValueError("positions must be 'int' or 'real'")
        if not isinstance(self.coloring, (Uniform, Multiform)):
            raise TypeError("coloring must be Uniform or Multiform")

    @property
    def uniform(self) -> bool:
        return isinstance(self.coloring, Uniform)

    def check_fits(self, m: int, n: int, c: int = 1):
        if self.w > n or self.h > m:
            raise ValueError(f"a {self.w}x{self.h} occlusion does not fit a {m}x{n} image")
        if self.uniform and len(self.coloring.mu) not in (1, c):
            raise ValueError(f"uniform colour has {len(self.coloring.mu)} channels, image has {c}")


@dataclass(frozen=True, eq=False)
class Placement:
    a: float
    b: float
    deltas: np.ndarray | None = None  # (m, n, c) per-pixel deltas, multiform only

    def delta(self, i: int, j: int, k: int = 0) -> float:
        if self.deltas is None:
            return 0.0
        return float(self.deltas[j - 1, i - 1, k])


def _check_placement(placement: Placement, m: int, n: int, spec: OcclusionSpec):
    if not (1.0 <= placement.a <= n and 1.0 <= placement.b <= m):
        raise ValueError(
            f"placement ({placement.a}, {placement.b}) outside [1, {n}] x [1, {m}]")
    if spec.positions == "int" and not (float(placement.a).is_integer()
                                        and float(placement.b).is_integer()):
        raise ValueError("integer-position occlusions need integer (a, b)")
    if placement.deltas is not None:
        if isinstance(spec.coloring, Uniform):
            raise ValueError("deltas are only meaningful for multiform occlusions")
        if np.any(np.abs(placement.deltas) > spec.coloring.eps + 1e-12):
            raise ValueError("delta outside [-eps, eps]")


def _axis_coverage(pixel: float, start: float, size: int) -> float:
    # occlusion pixels sit at start, start+1, ..., start+size-1 on this axis;
    # each one within distance < 1 contributes 1 - distance
    total = 0.0
    for k in range(size):
        dist = abs(pixel - (start + k))
        if dist < 1.0:
            total += 1.0 - dist
    return min(1.0, total)


def occlusion_factor(i: int, j: int, placement: Placement, spec: OcclusionSpec,
                     m: int | None = None, n: int | None = None) -> float:
    """Fraction in [0, 1] by which pixel (column i, row j) is occluded."""
    if i < 1 or j < 1 or (n is not None and i > n) or (m is not None and j > m):
        raise ValueError(f"pixel ({i}, {j}) outside the image")
    cov_i = _axis_coverage(i, placement.a, spec.w)
    cov_j = _axis_coverage(j, placement.b, spec.h)
    return max(0.0, cov_i + cov_j - 1.0)


def occlusion_mask(m: int, n: int, placement: Placement, spec: OcclusionSpec) -> np.ndarray:
    """Occlusion factors for every pixel, shape ``(m, n)`` (rows, columns)."""
    cols = np.arange(1, n + 1, dtype=np.float64)[:, None]
    rows = np.arange(1, m + 1, dtype=np.float64)[:, None]
    dc = np.abs(cols - (placement.a + np.arange(spec.w)))
    dr = np.abs(rows - (placement.b + np.arange(spec.h)))
    cov_i = np.minimum(1.0, np.where(dc < 1.0, 1.0 - dc, 0.0).sum(axis=1))
    cov_j = np.minimum(1.0, np.where(dr < 1.0, 1.0 - dr, 0.0).sum(axis=1))
    return np.maximum(0.0, cov_j[:, None] + cov_i[None, :] - 1.0)


def surrounding_occluders(i: float, j: float, placement: Placement, spec: OcclusionSpec):
    """Occlusion-pixel offsets ``(u, v)`` (column, row) lying within distance < 1 per axis."""
    out = []
    for v in range(spec.h):
        for u in range(spec.w):
            if abs(i - (placement.a + u)) < 1.0 and abs(j - (placement.b + v)) < 1.0:
                out.append((u, v))
    return out


def interpolated_color(i: int, j: int, placement: Placement, spec: OcclusionSpec,
                       occluder_colors) -> float:
    """Distance-weighted colour of the occlusion pixels surrounding (i, j).

    ``occluder_colors[v][u]`` is the colour of the occlusion pixel at offset
    column ``u`` and row ``v``.  Weights are the Euclidean distances
    themselves; a pixel sitting exactly on an occlusion pixel takes that
    pixel's colour.
    """
    near = surrounding_occluders(i, j, placement, spec)
    if not near:
        raise ValueError(f"pixel ({i}, {j}) is not under the occlusion")
    num = den = 0.0
    for u, v in near:
        d = math.hypot(i - (placement.a + u), j - (placement.b + v))
        if d == 0.0:
            return float(occluder_colors[v][u])
        num += float(occluder_colors[v][u]) * d
        den += d
    return num / den


def coloring_value(x: Image, i: int, j: int, spec: OcclusionSpec, placement: Placement,
                   k: int = 0) -> float:
    """Colour an occluded pixel takes before blending with its own value."""
    if occlusion_factor(i, j, placement, spec, x.m, x.n) <= 0.0:
        raise ValueError(f"pixel ({i}, {j}) is not occluded")
    if isinstance(spec.coloring, Uniform):
        return spec.coloring.channel(k)
    return x.at(i, j, k) + placement.delta(i, j, k)


def occlude(x: Image, spec: OcclusionSpec, placement: Placement) -> Image:
    """Apply the occlusion at ``placement`` to ``x``; results are clamped to [0, 1]."""
    spec.check_fits(x.m, x.n, x.c)
    _check_placement(placement, x.m, x.n, spec)
    s = occlusion_mask(x.m, x.n, placement, spec)[:, :, None]
    p = x.pixels
    if isinstance(spec.coloring, Uniform):
        mu = np.array([spec.coloring.channel(k) for k in range(x.c)])
        zeta = np.broadcast_to(mu, p.shape)
    else:
        d = placement.deltas if placement.deltas is not None else np.zeros(p.shape)
        zeta = p + d
    return Image(np.clip(p - s * (p - zeta), 0.0, 1.0))


def enumerate_integer_placements(m: int, n: int, spec: OcclusionSpec | None = None
                                 ) -> Iterator[Placement]:
    """All integer positions ``1 <= a <= n``, ``1 <= b <= m``, row by row."""
    for b in range(1, m + 1):
        for a in range(1, n + 1):
            yield Placement(float(a), float(b))
