"""Branch-and-bound decision procedure for single robustness queries.

A query asks whether some input in a box drives output ``l`` to at least
output ``q``.  The search maximises ``g = F_l - F_q``:

* every node gets sound symbolic bounds; nodes whose upper bound on ``g`` is
  below ``-tol`` are discarded;
* every node is probed for a concrete counterexample (relaxation vertices,
  the centre, random points, and a short local ascent);
* nodes are split on integer-marked inputs first, then on marked continuous
  inputs wider than ``bisect_width``, then on the widest unstable ReLU;
* a node without unstable ReLUs is affine, and is decided exactly by a
  vertex argument (box only) or a linear program (box plus ReLU phases).

Counterexamples are re-evaluated concretely before being reported.
"""
from __future__ import annotations

import heapq
import time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.optimize import linprog

from ..model import Network, forward, forward_batch
from ..onn import Box
from .bounds import backward_upper, objective_weights, run_pass

DEFAULT_TOL = 1e-6
DEFAULT_TIMEOUT = 60.0


class Status(str, Enum):
    ROBUST = "robust"
    NONROBUST = "nonrobust"
    TIMEOUT = "timeout"


@dataclass
class Query:
    network: Network
    box: Box
    correct_label: int
    adversarial_label: int
    timeout: float = DEFAULT_TIMEOUT
    seed: int = 0
    bisect: np.ndarray | None = None  # inputs bisected before ReLU splitting
    bisect_width: float = 0.0625
    tol: float = DEFAULT_TOL

    def __post_init__(self):
        r = self.network.output_dim
        if self.correct_label == self.adversarial_label:
            raise ValueError("adversarial label must differ from the correct label")
        for lab in (self.correct_label, self.adversarial_label):
            if not 0 <= lab < r:
                raise ValueError(f"label {lab} outside 0..{r - 1}")
        if self.box.dim != self.network.input_dim:
            raise ValueError("box dimension does not match the network input")

    @property
    def objective(self) -> np.ndarray:
        c = np.zeros(self.network.output_dim)
        c[self.adversarial_label] = 1.0
        c[self.correct_label] = -1.0
        return c


@dataclass
class Verdict:
    status: Status
    witness: np.ndarray | None = None
    margin: float | None = None       # F_l - F_q at the witness
    predicted: int | None = None
    occluded_image: object = None
    warning: str | None = None
    stats: dict = field(default_factory=dict)

    @property
    def robust(self) -> bool:
        return self.status is Status.ROBUST

    @property
    def nonrobust(self) -> bool:
        return self.status is Status.NONROBUST


def query_margin(net: Network, theta, q: int, l: int) -> float:
    y = forward(net, theta)
    return float(y[l] - y[q])


class _Found(Exception):
    def __init__(self, witness, margin):
        self.witness = witness
        self.margin = margin


class _Search:
    def __init__(self, query: Query, stop_event=None, kernel=None):
        self.q = query
        self.net = query.network
        self.stop = stop_event
        self.kernel = kernel
        self.rng = np.random.default_rng(query.seed)
        self.weights = objective_weights(self.net, query.objective)
        self.obj = query.objective
        self.hidden = [layer.out_dim for layer in self.net.layers[:-1]]
        self.influential = self._influence()
        box = query.box
        self.integer = box.integer.copy()
        self.bisect = (np.zeros(box.dim, dtype=bool) if query.bisect is None
                       else np.asarray(query.bisect, dtype=bool) & ~self.integer)
        self.stats = {"nodes": 0, "branches": 0, "bound_passes": 0, "lp_calls": 0,
                      "leaves": 0, "samples": 0}
        self.warning = None
        self.start = time.perf_counter()
        self.deadline = self.start + query.timeout

    # -- static analysis -----------------------------------------------------

    def _influence(self):
        # neurons with a nonzero-weight path to the objective
        wpos, wneg, _ = self.weights
        alive = (wpos[-1][0] != 0.0) | (wneg[-1][0] != 0.0)
        out = [None] * len(self.hidden)
        for t in range(len(self.hidden) - 1, -1, -1):
            out[t] = alive
            if t == 0:
                break
            w = self.net.layers[t].weights
            alive = (np.abs(w[alive]).sum(axis=0) > 0.0)
        return out

    # -- candidate evaluation ------------------------------------------------

    def _round(self, pts, lo, hi):
        if self.integer.any():
            pts[:, self.integer] = np.clip(np.round(pts[:, self.integer]),
                                           lo[self.integer], hi[self.integer])
        return pts

    def _objective(self, pts):
        y = forward_batch(self.net, pts)
        self.stats["samples"] += len(pts)
        return y @ self.obj

    def _gradient(self, x):
        trace = forward(self.net, x, return_all=True)
        v = self.obj @ self.net.layers[-1].weights
        for t in range(len(self.net.layers) - 2, -1, -1):
            v = v * (trace[t + 1] > 0.0)
            v = v @ self.net.layers[t].weights
        return v

    def _ascend(self, x, gx, lo, hi, steps):
        free = hi > lo
        for _ in range(steps):
            g = self._gradient(x)
            target = np.where(g > 0.0, hi, lo)
            target[~free] = x[~free]
            ts = np.array([1.0, 0.5, 0.25, 0.1])
            pts = x[None, :] + ts[:, None] * (target - x)[None, :]
            pts = self._round(pts, lo, hi)
            vals = self._objective(pts)
            k = int(np.argmax(vals))
            if vals[k] <= gx:
                break
            x, gx = pts[k], float(vals[k])
            if gx >= 0.0:
                break
        return x, gx

    def _falsify(self, lo, hi, forms, n_random, ascent_steps, direction=None):
        cands = [0.5 * (lo + hi)]
        if forms is not None:
            lc, _, uc, _ = forms
            free = np.flatnonzero(hi > lo)
            for coef in (uc[0], lc[0]):
                v = lo.copy()
                v[free] = np.where(coef > 0.0, hi[free], lo[free])
                cands.append(v)
        if direction is not None:
            cands.append(np.where(direction > 0.0, hi, lo))
        if n_random:
            cands.extend(lo + self.rng.random((n_random, lo.size)) * (hi - lo))
        pts = self._round(np.array(cands), lo, hi)
        vals = self._objective(pts)
        k = int(np.argmax(vals))
        best, gbest = pts[k], float(vals[k])
        if gbest < 0.0 and ascent_steps:
            best, gbest = self._ascend(best.copy(), gbest, lo, hi, ascent_steps)
        if gbest >= 0.0:
            self._accept(best)
        return gbest

    def _accept(self, x):
        x = np.array(x, dtype=np.float64)
        if not self.q.box.contains(x):
            return
        margin = query_margin(self.net, x, self.q.correct_label, self.q.adversarial_label)
        if margin >= 0.0:
            raise _Found(x, margin)

    # -- bounding and branching ---------------------------------------------

    def _bound(self, lo, hi, phases, prior):
        self.stats["bound_passes"] += 1
        return run_pass(self.weights, Box(lo, hi), phases, prior, self.kernel)

    def _choose_relu(self, nb, phases):
        best = None
        best_w = 0.0
        for t in range(len(self.hidden)):
            l, u = nb.lower[t], nb.upper[t]
            cand = (l < 0.0) & (u > 0.0) & (phases[t] == 0) & self.influential[t]
            if not cand.any():
                continue
            width = np.where(cand, u - l, -1.0)
            k = int(np.argmax(width))
            if width[k] > best_w:
                best, best_w = (t, k), width[k]
        return best

    def _note(self, msg):
        if self.warning is None:
            self.warning = msg

    def _leaf(self, lo, hi, phases, nb, ub):
        """Exact decision on an affine piece; returns nothing, raises _Found or prunes."""
        self.stats["leaves"] += 1
        tol = self.q.tol
        if not any((p != 0).any() for p in phases):
            # affine on the whole box: the bound is exact, attained at the probed vertex
            if ub >= -tol:
                self._note(f"objective maximum {ub:.3g} within tolerance of zero")
            return
        free = np.flatnonzero(hi > lo)
        d = free.size
        base = lo.copy()
        coef = np.zeros((self.net.input_dim, d))
        coef[free, np.arange(d)] = 1.0
        const = base.copy()
        const[free] = 0.0
        rows, rhs = [], []
        layers = self.net.layers
        for t, layer in enumerate(layers[:-1]):
            pc = layer.weights @ coef
            pk = layer.weights @ const + layer.biases
            active = nb.lower[t] >= 0.0
            sel_a = phases[t] > 0
            sel_i = phases[t] < 0
            if sel_a.any():
                rows.append(-pc[sel_a])
                rhs.append(pk[sel_a])
            if sel_i.any():
                rows.append(pc[sel_i])
                rhs.append(-pk[sel_i])
            on = (active | sel_a) & ~sel_i
            coef = pc * on[:, None]
            const = pk * on
        wl = self.obj @ layers[-1].weights
        oc = wl @ coef
        ok = wl @ const + self.obj @ layers[-1].biases
        if d == 0:
            x = lo.copy()
            self._accept(x)
            return
        self.stats["lp_calls"] += 1
        res = linprog(-oc, A_ub=np.vstack(rows) if rows else None,
                      b_ub=np.concatenate(rhs) if rhs else None,
                      bounds=list(zip(lo[free], hi[free])), method="highs")
        if res.status == 2:
            return
        if res.status != 0:
            # solver trouble: fall back on the sound bound
            if ub >= -tol:
                self._note(f"LP status {res.status} on a leaf with bound {ub:.3g}")
            return
        val = -res.fun + ok
        x = lo.copy()
        x[free] = np.clip(res.x, lo[free], hi[free])
        self._accept(x)
        if val >= -tol:
            self._note(f"leaf maximum {val:.3g} within tolerance of zero")

    def _children(self, lo, hi, phases, nb):
        width = hi - lo
        ints = self.integer & (width > 0)
        if ints.any():
            k = int(np.argmax(np.where(ints, width, -1.0)))
            mid = np.floor(0.5 * (lo[k] + hi[k]))
            hi1 = hi.copy()
            hi1[k] = mid
            lo2 = lo.copy()
            lo2[k] = mid + 1.0
            return [(lo, hi1, phases), (lo2, hi, phases)]
        bis = self.bisect & (width > self.q.bisect_width)
        if bis.any():
            k = int(np.argmax(np.where(bis, width, -1.0)))
            mid = 0.5 * (lo[k] + hi[k])
            snap = np.round(mid)
            if width[k] > 1.0 and lo[k] < snap < hi[k]:
                mid = snap  # keep cells aligned with the pixel grid
            hi1 = hi.copy()
            hi1[k] = mid
            lo2 = lo.copy()
            lo2[k] = mid
            return [(lo, hi1, phases), (lo2, hi, phases)]
        pick = self._choose_relu(nb, phases)
        if pick is None:
            return None
        t, k = pick
        out = []
        for sign in (1, -1):
            ph = [p.copy() if i == t else p for i, p in enumerate(phases)]
            ph[t][k] = sign
            out.append((lo, hi, ph))
        return out

    def _expired(self):
        if self.stop is not None and self.stop.is_set():
            return True
        return time.perf_counter() >= self.deadline

    def run(self) -> Verdict:
        q = self.q
        if self._expired():
            return self._verdict(Status.TIMEOUT)
        lo, hi = q.box.lo.copy(), q.box.hi.copy()
        phases = [np.zeros(n, dtype=np.int8) for n in self.hidden]
        heap = []
        counter = 0
        try:
            root = self._evaluate(lo, hi, phases, None, np.inf, root=True)
            if root is not None:
                heapq.heappush(heap, (-root[0], counter, root))
            while heap:
                if self._expired():
                    return self._verdict(Status.TIMEOUT)
                _, _, (ub, lo, hi, phases, nb) = heapq.heappop(heap)
                kids = self._children(lo, hi, phases, nb)
                self.stats["nodes"] += 1
                if kids is None:
                    self._leaf(lo, hi, phases, nb, ub)
                    continue
                self.stats["branches"] += 1
                prior = (nb.lower[:-1], nb.upper[:-1])
                for clo, chi, cph in kids:
                    res = self._evaluate(clo, chi, cph, prior, ub)
                    if res is not None:
                        counter += 1
                        heapq.heappush(heap, (-res[0], counter, res))
        except _Found as hit:
            v = self._verdict(Status.NONROBUST)
            v.witness = hit.witness
            v.margin = hit.margin
            v.predicted = int(np.argmax(forward(self.net, hit.witness)))
            if hit.margin == 0.0:
                v.warning = "counterexample relies on an exact output tie"
            return v
        return self._verdict(Status.ROBUST)

    def _evaluate(self, lo, hi, phases, prior, parent_ub, root=False):
        """Bound and probe a node; returns the heap payload or None when pruned."""
        nb = self._bound(lo, hi, phases, prior)
        if not nb.feasible:
            return None
        back, direction = backward_upper(self.weights, Box(lo, hi), nb)
        ub = min(float(nb.output_upper[0]), back, parent_ub)
        lb = float(nb.output_lower[0])
        self._falsify(lo, hi, nb.forms, 32 if root else 2, 3 if root else 1, direction)
        if lb >= 0.0:
            # every point is a counterexample; the probes should have caught one
            self._accept(0.5 * (lo + hi))
        if ub < -self.q.tol:
            return None
        return (ub, lo, hi, phases, nb)

    def _verdict(self, status):
        self.stats["time"] = time.perf_counter() - self.start
        return Verdict(status, warning=self.warning if status is Status.ROBUST else None,
                       stats=dict(self.stats))


def check_query(query: Query, stop_event=None, kernel=None) -> Verdict:
    """Decide whether any input in ``query.box`` gives ``F_l >= F_q``.

    Never raises on timeout or cancellation; returns a ``TIMEOUT`` verdict.
    """
    return _Search(query, stop_event, kernel).run()
