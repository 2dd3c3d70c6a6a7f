"""Sound neuron bounds for ReLU networks over input boxes."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..model import Network
from ..onn import Box
from . import backend


@dataclass
class NeuronBounds:
    """Pre-activation bounds per layer (hidden layers, then the output layer)."""
    lower: list
    upper: list
    feasible: bool = True
    forms: tuple | None = None  # affine lower/upper forms of the last layer

    @property
    def output_lower(self) -> np.ndarray:
        return self.lower[-1]

    @property
    def output_upper(self) -> np.ndarray:
        return self.upper[-1]

    def stable_active(self, layer: int) -> np.ndarray:
        return self.lower[layer] >= 0.0

    def stable_inactive(self, layer: int) -> np.ndarray:
        return self.upper[layer] <= 0.0

    def unstable(self, layer: int) -> np.ndarray:
        return (self.lower[layer] < 0.0) & (self.upper[layer] > 0.0)


def split_weights(net: Network):
    """Positive/negative weight parts per layer, memoised on the network."""
    cached = net._cache.get("split")
    if cached is None:
        wpos = [np.ascontiguousarray(np.maximum(w, 0.0)) for w in net.weights]
        wneg = [np.ascontiguousarray(np.minimum(w, 0.0)) for w in net.weights]
        biases = [np.ascontiguousarray(b) for b in net.biases]
        cached = (wpos, wneg, biases)
        net._cache["split"] = cached
    return cached


def objective_weights(net: Network, coef) -> tuple:
    """Layer weights with the output layer replaced by the scalar ``coef . output``."""
    coef = np.asarray(coef, dtype=np.float64)
    wpos, wneg, biases = split_weights(net)
    last = net.layers[-1]
    row = (coef @ last.weights)[None, :]
    bias = np.array([coef @ last.biases])
    return (wpos[:-1] + [np.ascontiguousarray(np.maximum(row, 0.0))],
            wneg[:-1] + [np.ascontiguousarray(np.minimum(row, 0.0))],
            biases[:-1] + [bias])


def run_pass(weights, box: Box, phases=None, prior=None, kernel=None) -> NeuronBounds:
    wpos, wneg, biases = weights
    free = np.flatnonzero(box.hi > box.lo).astype(np.intp)
    fn = kernel or backend.symbolic_pass
    prior_l, prior_u = prior if prior is not None else (None, None)
    pre_l, pre_u, out_l, out_u, forms, feasible = fn(
        wpos, wneg, biases, np.ascontiguousarray(box.lo, dtype=np.float64),
        np.ascontiguousarray(box.hi, dtype=np.float64), free, phases, prior_l, prior_u)
    return NeuronBounds(list(pre_l) + [out_l], list(pre_u) + [out_u], bool(feasible), forms)


def propagate_bounds(net: Network, box: Box, phases=None, prior=None, kernel=None) -> NeuronBounds:
    """Symbolic interval bounds on every pre-activation of ``net`` over ``box``.

    ``phases`` optionally fixes ReLUs (+1 active / -1 inactive per hidden
    neuron) and ``prior`` supplies ``(lower, upper)`` lists of already-known
    hidden bounds to intersect with.
    """
    if box.dim != net.input_dim:
        raise ValueError(f"box has {box.dim} dimensions, network expects {net.input_dim}")
    return run_pass(split_weights(net), box, phases, prior, kernel)


def interval_bounds(net: Network, box: Box) -> NeuronBounds:
    """Plain interval arithmetic; looser than :func:`propagate_bounds`, used as a cross-check."""
    lo, hi = box.lo.copy(), box.hi.copy()
    lower, upper = [], []
    for layer in net.layers:
        wp = np.maximum(layer.weights, 0.0)
        wn = np.minimum(layer.weights, 0.0)
        l = wp @ lo + wn @ hi + layer.biases
        u = wp @ hi + wn @ lo + layer.biases
        lower.append(l)
        upper.append(u)
        lo, hi = (np.maximum(l, 0.0), np.maximum(u, 0.0)) if layer.relu else (l, u)
    return NeuronBounds(lower, upper)


def backward_upper(weights, box: Box, nb: NeuronBounds):
    """Upper bound of the scalar objective by back-substitution through relaxed ReLUs.

    Uses the hidden pre-activation bounds in ``nb``; each unstable ReLU is
    replaced by its chord from above or by slope 0/1 from below, whichever
    direction the coefficient needs.  Returns ``(bound, coef)`` where
    ``coef`` is the input-space linear function attaining the bound.
    """
    wpos, wneg, biases = weights
    lam = (wpos[-1][0] + wneg[-1][0]).copy()
    const = float(biases[-1][0])
    for t in range(len(biases) - 2, -1, -1):
        l, u = nb.lower[t], nb.upper[t]
        dead = u <= 0.0
        live = l >= 0.0
        unstable = ~(dead | live)
        slope = np.where(live, 1.0, 0.0)
        if unstable.any():
            lu, uu = l[unstable], u[unstable]
            chord = uu / (uu - lu)
            pos = lam[unstable] >= 0.0
            s = np.where(pos, chord, np.where(uu > -lu, 1.0, 0.0))
            slope[unstable] = s
            const += float(np.sum(np.where(pos, lam[unstable] * chord * -lu, 0.0)))
        lam = lam * slope
        const += float(lam @ biases[t])
        lam = lam @ wpos[t] + lam @ wneg[t]
    bound = const + float(np.sum(np.maximum(lam * box.lo, lam * box.hi)))
    return bound, lam
