import json
import time

import numpy as np
import pytest

from occver import fixtures
from occver.model import Network, classify
from occver.occlusion import Image, Multiform, OcclusionSpec, Placement, Uniform, occlude
from occver.onn import PositionRegion
from occver.orchestrator import (INCONCLUSIVE, NONROBUST, ROBUST, Report, VerificationConfig,
                                 aggregate, center_outward, format_table, sort_labels, split_region,
                                 verify_occlusion_robustness)
from occver.verifier import Status, Verdict, check_query
from oracles import flips_anywhere, random_instance


def _sum_net(consts):
    """Output 0 is the total brightness, output k>0 is the constant ``consts[k-1]``."""
    r = len(consts) + 1
    w2 = np.zeros((r, 4))
    w2[0] = 1.0
    return Network.from_arrays([np.eye(4), w2], [np.zeros(4), np.array([0.0] + list(consts))])


EXAMPLE = Image(np.array([[0.4, 0.55], [0.6, 0.72]]))


def _timeout_backend(query, stop_event=None):
    return Verdict(Status.TIMEOUT, stats={"time": 0.0, "nodes": 0})


def _robust_backend(query, stop_event=None):
    return Verdict(Status.ROBUST, stats={"time": 0.0, "nodes": 1})


def test_split_single_region():
    assert split_region(28, 28, 1, 1) == [PositionRegion(1.0, 28.0, 1.0, 28.0)]


def test_real_split_covers_domain():
    regions = split_region(28, 28, 4, 4)
    assert len(regions) == 16
    rng = np.random.default_rng(0)
    for a, b in rng.uniform(1, 28, size=(2000, 2)):
        assert any(r.a_lo <= a <= r.a_hi and r.b_lo <= b <= r.b_hi for r in regions)
    assert {r.a_lo for r in regions} == {1.0, 7.75, 14.5, 21.25}


def test_integer_split_is_disjoint_and_complete():
    regions = split_region(7, 5, 3, 2, integer=True)
    cells = [(a, b) for r in regions
             for a in range(int(r.a_lo), int(r.a_hi) + 1)
             for b in range(int(r.b_lo), int(r.b_hi) + 1)]
    assert sorted(cells) == [(a, b) for a in range(1, 6) for b in range(1, 8)]


def test_split_rejects_bad_counts():
    with pytest.raises(ValueError):
        split_region(4, 4, 0, 1)
    with pytest.raises(ValueError):
        split_region(4, 4, 5, 1)


def test_center_outward_starts_in_the_middle():
    regions = center_outward(split_region(9, 9, 3, 3, integer=True), 9, 9)
    assert regions[0] == PositionRegion(4.0, 6.0, 4.0, 6.0)


def test_sort_labels_by_score():
    f = fixtures.network("tiny_const")   # outputs (0.1, 0.7, 0.2)
    x = Image(np.zeros((4, 4)))
    assert sort_labels(f, x, 1) == [2, 0]


def test_sort_labels_ties_by_index():
    f = _sum_net([0.5, 0.5, 0.5])
    assert sort_labels(f, EXAMPLE, 0) == [1, 2, 3]


def test_example_nonrobust_with_counterexample():
    f = _sum_net([1.8])
    rep = verify_occlusion_robustness(f, EXAMPLE, OcclusionSpec(1, 1, Uniform(0.0)))
    assert rep.overall == NONROBUST
    cx = rep.counterexample
    assert cx.original_label == 0 and cx.adversarial_label == 1
    y = occlude(EXAMPLE, OcclusionSpec(1, 1, Uniform(0.0)), Placement(cx.a, cx.b))
    assert np.allclose(y.pixels, cx.image.pixels)
    assert classify(f, y.flat()) == 1


def test_constant_network_robust_without_timeouts():
    f = fixtures.network("tiny_const")
    x = Image(np.random.default_rng(0).random((4, 4)))
    for cfg in (VerificationConfig(), VerificationConfig(k_m=2, k_n=2)):
        rep = verify_occlusion_robustness(f, x, OcclusionSpec(2, 2, Uniform(0.0)), cfg)
        assert rep.overall == ROBUST and rep.timeout_percent == 0.0
        assert len(rep.records) == rep.total_queries == 2 * cfg.k_m * cfg.k_n


def test_sorting_issues_fewer_queries():
    # label 2 is reachable and scores above label 1, which never is
    f = _sum_net([-100.0, 1.8])
    spec = OcclusionSpec(1, 1, Uniform(0.0))
    on = verify_occlusion_robustness(f, EXAMPLE, spec, VerificationConfig(label_sorting=True))
    off = verify_occlusion_robustness(f, EXAMPLE, spec, VerificationConfig(label_sorting=False))
    assert on.overall == off.overall == NONROBUST
    assert len(on.records) == 1 and len(off.records) == 2


def test_all_timeouts_are_inconclusive():
    rep = verify_occlusion_robustness(_sum_net([1.8]), EXAMPLE, OcclusionSpec(1, 1, Uniform(0.0)),
                                      VerificationConfig(k_m=2, k_n=2), backend=_timeout_backend)
    assert rep.overall == INCONCLUSIVE and rep.timeout_percent == 100.0


def test_plugged_backend_is_used():
    calls = []

    def backend(query, stop_event=None):
        calls.append(query.adversarial_label)
        return _robust_backend(query)

    rep = verify_occlusion_robustness(_sum_net([1.8, 0.0]), EXAMPLE, OcclusionSpec(1, 1, Uniform(0.0)),
                                      backend=backend)
    assert rep.overall == ROBUST and sorted(calls) == [1, 2]


def test_invalid_counterexample_is_rejected():
    def liar(query, stop_event=None):
        return Verdict(Status.NONROBUST, witness=query.box.lo.copy(), margin=0.0,
                       stats={"time": 0.0})

    rep = verify_occlusion_robustness(fixtures.network("tiny_const"), Image(np.zeros((4, 4))),
                                      OcclusionSpec(1, 1, Uniform(0.0)), backend=liar)
    assert rep.overall == INCONCLUSIVE
    assert rep.counterexample is None and rep.warnings


def test_global_timeout_zero():
    rep = verify_occlusion_robustness(_sum_net([1.8]), EXAMPLE, OcclusionSpec(1, 1, Uniform(0.0)),
                                      VerificationConfig(global_timeout=0.0))
    assert rep.overall == INCONCLUSIVE


def test_config_validation():
    with pytest.raises(ValueError):
        VerificationConfig(workers=0)
    with pytest.raises(ValueError):
        VerificationConfig(encoding="other")
    with pytest.raises(ValueError):
        verify_occlusion_robustness(_sum_net([1.8]), Image(np.zeros((3, 3))),
                                    OcclusionSpec(1, 1, Uniform(0.0)))


def _mk_report(overall, t, queries=4, timeouts=0):
    recs = [type("R", (), {"status": Status.TIMEOUT.value})() for _ in range(timeouts)]
    return Report(overall, recs, 0.01, t, queries)


def test_aggregate_all_robust():
    row = aggregate([_mk_report(ROBUST, 1.0), _mk_report(ROBUST, 3.0)])
    assert row["robust"] == 2 and row["nonrobust"] == 0
    assert row["t_robust"] == 2.0 and row["t_nonrobust"] is None
    assert "/" in format_table([dict(row, size="2x2", eps="0.1")]).splitlines()[2]


def test_aggregate_timeout_share():
    reps = [_mk_report(INCONCLUSIVE, 1.0, 4, 3)] + [_mk_report(ROBUST, 1.0) for _ in range(3)]
    assert aggregate(reps)["timeout_percent"] == pytest.approx(18.75)


def test_aggregate_empty_raises():
    with pytest.raises(ValueError):
        aggregate([])


def test_report_json_roundtrip():
    rep = verify_occlusion_robustness(_sum_net([1.8]), EXAMPLE, OcclusionSpec(1, 1, Uniform(0.0)))
    data = json.loads(rep.to_json())
    assert data["overall"] == NONROBUST and data["counterexample"]["a"] == rep.counterexample.a


CONFIGS = [VerificationConfig(), VerificationConfig(k_m=2, k_n=2),
           VerificationConfig(label_sorting=False), VerificationConfig(encoding="omnn"),
           VerificationConfig(k_m=2, k_n=2, workers=2)]


def test_verdicts_agree_with_enumeration_across_configs(rng):
    for _ in range(8):
        f, x, spec = random_instance(rng, max_relus=12, max_side=5)
        truth = NONROBUST if flips_anywhere(f, x, spec) else ROBUST
        for cfg in CONFIGS:
            rep = verify_occlusion_robustness(f, x, spec, cfg)
            assert rep.overall == truth, cfg
            if truth == ROBUST:
                # every (region, label) pair was dispatched and closed
                pairs = {(json.dumps(r.region, sort_keys=True), r.label) for r in rep.records}
                assert len(pairs) == rep.total_queries == len(rep.records)


def test_multiform_real_positions_runs(rng):
    f, x, _ = random_instance(rng, max_relus=10, max_side=4)
    spec = OcclusionSpec(1, 1, Multiform(0.05), "real")
    rep = verify_occlusion_robustness(f, x, spec, VerificationConfig(timeout_per_query=20))
    assert rep.overall in (ROBUST, NONROBUST)
    if rep.overall == NONROBUST:
        assert classify(f, rep.counterexample.image.flat()) != classify(f, x.flat())


def test_parallel_stops_early():
    f = _sum_net([1.8])
    start = time.perf_counter()
    rep = verify_occlusion_robustness(f, EXAMPLE, OcclusionSpec(1, 1, Uniform(0.0)),
                                      VerificationConfig(k_m=2, k_n=2, workers=2))
    assert rep.overall == NONROBUST
    assert time.perf_counter() - start < 30
