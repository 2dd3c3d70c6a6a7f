"""End-to-end occlusion robustness check of one image.

The occlusion network is built once and composed with the classifier.  The
position domain is split into ``k_m x k_n`` regions and every region is
paired with every adversarial label; each pair is one query.  Labels are
dispatched in order of the original output scores (most likely first) and
the first validated counterexample stops the run.
"""
from __future__ import annotations

import json
import multiprocessing as mp
import os
import time
from concurrent.futures import FIRST_COMPLETED, ProcessPoolExecutor, wait
from dataclasses import asdict, dataclass, field

import numpy as np

from .model import Network, classify, forward
from .occlusion import Image, OcclusionSpec
from .onn import (OnnBundle, PositionRegion, build_onn, coloring_dict, compose, compose_omnn,
                  decode_input, input_box)
from .verifier import Query, Status, check_query, validate_counterexample

ROBUST = "Robust"
NONROBUST = "NonRobust"
INCONCLUSIVE = "Inconclusive"


@dataclass
class VerificationConfig:
    k_m: int = 1
    k_n: int = 1
    timeout_per_query: float = 60.0
    workers: int = 1
    label_sorting: bool = True
    seed: int = 0
    global_timeout: float | None = None
    bisect_width: float = 0.0625
    encoding: str = "pairwise"  # or "omnn": one max-gadget query per region

    def __post_init__(self):
        if self.k_m < 1 or self.k_n < 1:
            raise ValueError("split counts must be at least 1")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")
        if self.timeout_per_query < 0:
            raise ValueError("timeout must be non-negative")
        if self.encoding not in ("pairwise", "omnn"):
            raise ValueError("encoding must be 'pairwise' or 'omnn'")

    @property
    def splitting(self) -> bool:
        return self.k_m * self.k_n > 1


@dataclass
class QueryRecord:
    index: int
    region: dict
    label: int
    status: str
    seconds: float
    nodes: int = 0
    warning: str | None = None


@dataclass
class Counterexample:
    a: float
    b: float
    deltas: list | None
    original_label: int
    adversarial_label: int
    query_label: int
    margin: float
    image: Image = field(repr=False, default=None)
    witness: list = field(default_factory=list, repr=False)
    tie: bool = False

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("image")
        return d


@dataclass
class Report:
    overall: str
    records: list
    t_build: float
    t_verify: float
    total_queries: int
    counterexample: Counterexample | None = None
    config: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    @property
    def timeouts(self) -> int:
        return sum(r.status == Status.TIMEOUT.value for r in self.records)

    @property
    def timeout_percent(self) -> float:
        return 100.0 * self.timeouts / self.total_queries if self.total_queries else 0.0

    @property
    def t_robust(self) -> float | None:
        return self.t_verify if self.overall == ROBUST else None

    @property
    def t_nonrobust(self) -> float | None:
        return self.t_verify if self.overall == NONROBUST else None

    def to_dict(self) -> dict:
        return {
            "overall": self.overall,
            "t_build": self.t_build,
            "t_verify": self.t_verify,
            "t_robust": self.t_robust,
            "t_nonrobust": self.t_nonrobust,
            "total_queries": self.total_queries,
            "dispatched_queries": len(self.records),
            "timeouts": self.timeouts,
            "timeout_percent": self.timeout_percent,
            "counterexample": self.counterexample.to_dict() if self.counterexample else None,
            "records": [asdict(r) for r in self.records],
            "config": self.config,
            "warnings": self.warnings,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self) -> str:
        return format_table([summary_row("-", "-", [self])])


# -- query planning -------------------------------------------------------------

def _cuts(lo: int, hi: int, k: int, integer: bool):
    if integer:
        groups = np.array_split(np.arange(lo, hi + 1), k)
        return [(float(g[0]), float(g[-1])) for g in groups]
    edges = np.linspace(lo, hi, k + 1)
    return [(float(edges[t]), float(edges[t + 1])) for t in range(k)]


def split_region(m: int, n: int, k_m: int, k_n: int, integer: bool = False) -> list:
    """``k_m * k_n`` regions covering ``[1, n] x [1, m]``.

    Rows (``b``) are cut ``k_m`` ways and columns (``a``) ``k_n`` ways.  Real
    regions are closed and share their boundaries; integer regions are
    disjoint sets of whole positions.
    """
    if k_m < 1 or k_n < 1:
        raise ValueError("split counts must be at least 1")
    if k_m > m or k_n > n:
        raise ValueError(f"cannot split a {m}x{n} position grid {k_m}x{k_n} ways")
    rows = _cuts(1, m, k_m, integer)
    cols = _cuts(1, n, k_n, integer)
    return [PositionRegion(a0, a1, b0, b1) for b0, b1 in rows for a0, a1 in cols]


def center_outward(regions, m: int, n: int) -> list:
    """Regions ordered by distance of their centre from the image centre."""
    ca, cb = (1 + n) / 2.0, (1 + m) / 2.0

    def dist(item):
        t, r = item
        return ((r.a_lo + r.a_hi) / 2.0 - ca) ** 2 + ((r.b_lo + r.b_hi) / 2.0 - cb) ** 2, t

    return [r for _, r in sorted(enumerate(regions), key=dist)]


def sort_labels(f: Network, x: Image, q: int) -> list:
    """Labels other than ``q`` by descending output score; ties by index."""
    y = forward(f, x.flat())
    return sorted((l for l in range(f.output_dim) if l != q), key=lambda l: (-y[l], l))


@dataclass
class _Task:
    index: int
    region: PositionRegion
    label: int
    query: Query


def plan_queries(bundle: OnnBundle, f: Network, q: int, cfg: VerificationConfig):
    x = bundle.image
    integer = bundle.spec.positions == "int"
    regions = center_outward(split_region(x.m, x.n, cfg.k_m, cfg.k_n, integer), x.m, x.n)
    labels = sort_labels(f, x, q) if cfg.label_sorting else [l for l in range(f.output_dim) if l != q]
    lay = bundle.input_layout
    bisect = None
    if bundle.spec.positions == "real":
        bisect = np.zeros(bundle.input_dim, dtype=bool)
        bisect[[lay["a"], lay["b"]]] = True
    tasks = []
    if cfg.encoding == "omnn":
        for region in regions:
            net, _ = compose_omnn(bundle, f, q, region)
            query = Query(net, input_box(bundle, region), 0, 1, timeout=cfg.timeout_per_query,
                          seed=cfg.seed + len(tasks), bisect=bisect, bisect_width=cfg.bisect_width)
            tasks.append(_Task(len(tasks), region, -1, query))
        return tasks
    composed = compose(bundle, f)
    for label in labels:
        for region in regions:
            query = Query(composed, input_box(bundle, region), q, label,
                          timeout=cfg.timeout_per_query, seed=cfg.seed + len(tasks),
                          bisect=bisect, bisect_width=cfg.bisect_width)
            tasks.append(_Task(len(tasks), region, label, query))
    return tasks


# -- workers --------------------------------------------------------------------

_STOP = None


def _init_worker(event):
    global _STOP
    _STOP = event


def _run_task(backend, query: Query):
    return backend(query, stop_event=_STOP)


def _dispatch(tasks, cfg: VerificationConfig, accept, deadline, backend):
    """Run tasks, calling ``accept(task, verdict)`` per result; it returns True to stop."""
    if cfg.workers == 1 or len(tasks) <= 1:
        for task in tasks:
            if deadline is not None:
                task.query.timeout = max(0.0, min(task.query.timeout, deadline - time.perf_counter()))
            if accept(task, backend(task.query, stop_event=None)):
                return
        return
    ctx = mp.get_context("fork") if "fork" in mp.get_all_start_methods() else mp.get_context()
    stop = ctx.Event()
    pending = list(reversed(tasks))
    running = {}
    with ProcessPoolExecutor(max_workers=cfg.workers, mp_context=ctx,
                             initializer=_init_worker, initargs=(stop,)) as pool:
        def submit():
            task = pending.pop()
            if deadline is not None:
                task.query.timeout = max(0.0, min(task.query.timeout, deadline - time.perf_counter()))
            running[pool.submit(_run_task, backend, task.query)] = task

        while pending and len(running) < cfg.workers:
            submit()
        while running:
            done, _ = wait(list(running), return_when=FIRST_COMPLETED)
            for fut in done:
                task = running.pop(fut)
                if accept(task, fut.result()):
                    stop.set()
                    pending.clear()
            while pending and len(running) < cfg.workers:
                submit()


def verify_occlusion_robustness(f: Network, x: Image, spec: OcclusionSpec,
                                cfg: VerificationConfig | None = None, backend=None) -> Report:
    """Decide whether every occlusion described by ``spec`` keeps ``x``'s label.

    ``backend(query, stop_event=None) -> Verdict`` decides single queries; it
    defaults to the built-in :func:`check_query` and must be picklable when
    ``cfg.workers > 1``.
    """
    backend = backend or check_query
    cfg = cfg or VerificationConfig()
    spec.check_fits(x.m, x.n, x.c)
    if f.input_dim != x.m * x.n * x.c:
        raise ValueError(f"network expects {f.input_dim} inputs, image has {x.m * x.n * x.c} values")
    split_region(x.m, x.n, cfg.k_m, cfg.k_n, spec.positions == "int")
    q = classify(f, x.flat())

    t0 = time.perf_counter()
    bundle = build_onn(x, spec)
    t_build = time.perf_counter() - t0

    start = time.perf_counter()
    tasks = plan_queries(bundle, f, q, cfg)
    deadline = start + cfg.global_timeout if cfg.global_timeout is not None else None
    records = []
    found = []
    warnings = []

    def accept(task, verdict):
        records.append(QueryRecord(task.index, task.region.as_dict(), task.label,
                                   verdict.status.value, float(verdict.stats.get("time", 0.0)),
                                   int(verdict.stats.get("nodes", 0)), verdict.warning))
        if verdict.warning:
            warnings.append(verdict.warning)
        if verdict.status is not Status.NONROBUST or found:
            return False
        ok, img = validate_counterexample(task.query.network, verdict.witness, task.query, x,
                                          spec, bundle.onn)
        if not ok:
            records[-1].status = Status.TIMEOUT.value
            warnings.append(f"query {task.index}: rejected an invalid counterexample")
            return False
        placement = decode_input(bundle, verdict.witness)
        y = forward(f, img.flat())
        adv = int(np.argmax(y))
        found.append(Counterexample(
            a=placement.a, b=placement.b,
            deltas=None if placement.deltas is None else placement.deltas.tolist(),
            original_label=q, adversarial_label=adv, query_label=task.label,
            margin=float(verdict.margin), image=img, witness=verdict.witness.tolist(),
            tie=adv == q))
        return True

    _dispatch(tasks, cfg, accept, deadline, backend)
    t_verify = time.perf_counter() - start
    records.sort(key=lambda r: r.index)
    if found:
        overall = NONROBUST
    elif len(records) == len(tasks) and all(r.status == Status.ROBUST.value for r in records):
        overall = ROBUST
    else:
        overall = INCONCLUSIVE
    config = asdict(cfg)
    config.update({"image_shape": [x.m, x.n, x.c], "occlusion": {
        "w": spec.w, "h": spec.h, "positions": spec.positions, "coloring": coloring_dict(spec)},
        "label": q})
    return Report(overall, records, t_build, t_verify, len(tasks),
                  found[0] if found else None, config, warnings)


# -- aggregation ----------------------------------------------------------------

def aggregate(reports) -> dict:
    """Table-style summary over the reports of several images.

    ``t_robust``/``t_nonrobust`` average verification time over robust and
    non-robust images (``None`` when there are none), ``timeout_percent`` is
    the share of timed-out queries among all planned queries.
    """
    reports = list(reports)
    if not reports:
        raise ValueError("cannot aggregate an empty set of reports")
    rob = [r.t_verify for r in reports if r.overall == ROBUST]
    non = [r.t_verify for r in reports if r.overall == NONROBUST]
    total = sum(r.total_queries for r in reports)
    timeouts = sum(r.timeouts for r in reports)
    return {
        "nonrobust": len(non),
        "robust": len(rob),
        "inconclusive": len(reports) - len(rob) - len(non),
        "t_robust": float(np.mean(rob)) if rob else None,
        "t_nonrobust": float(np.mean(non)) if non else None,
        "t_build": float(np.mean([r.t_build for r in reports])),
        "timeout_percent": 100.0 * timeouts / total if total else 0.0,
    }


def summary_row(size: str, eps: str, reports) -> dict:
    row = aggregate(reports)
    row.update(size=size, eps=eps)
    return row


def _cell(v, digits=2):
    if v is None:
        return "/"
    return f"{v:.{digits}f}"


def format_table(rows) -> str:
    """Text table with the columns Size, eps, -/+, T+, T-, T_build, TO(%)."""
    head = ["Size", "eps", "- / +", "T+ (s)", "T- (s)", "T_build (s)", "TO(%)"]
    body = [[str(r["size"]), str(r["eps"]), f"{r['nonrobust']} / {r['robust']}",
             _cell(r["t_robust"]), _cell(r["t_nonrobust"]), _cell(r["t_build"], 4),
             _cell(r["timeout_percent"])] for r in rows]
    widths = [max(len(h), *(len(b[k]) for b in body)) if body else len(h)
              for k, h in enumerate(head)]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    lines = [fmt.format(*head), fmt.format(*("-" * w for w in widths))]
    lines += [fmt.format(*b) for b in body]
    return "\n".join(lines) + "\n"


def default_workers() -> int:
    return os.cpu_count() or 1
