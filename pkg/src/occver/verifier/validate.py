"""Concrete re-checking of counterexamples."""
from __future__ import annotations

import numpy as np

from ..model import Network, forward
from ..occlusion import Image, OcclusionSpec
from ..onn import build_onn
from .engine import Query


def validate_counterexample(net: Network, witness, query: Query, x: Image,
                            spec: OcclusionSpec, onn: Network | None = None):
    """Check that ``witness`` lies in the query box and that ``F_l >= F_q`` there.

    Returns ``(ok, occluded_image)``; the image is ``None`` when rejected.
    ``onn`` may be passed to avoid rebuilding the occlusion network.
    """
    w = np.asarray(witness, dtype=np.float64)
    if w.shape != (net.input_dim,) or not np.all(np.isfinite(w)):
        return False, None
    if not query.box.contains(w):
        return False, None
    y = forward(net, w)
    if y[query.adversarial_label] - y[query.correct_label] < 0.0:
        return False, None
    if onn is None:
        onn = build_onn(x, spec).onn
    # rounding can push a value a few ulps outside [0, 1]
    img = Image.from_flat(forward(onn, w), x.m, x.n, x.c, clip=True)
    return True, img
