import threading
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from occver.model import Network, classify, forward, forward_batch
from occver.occlusion import Image, OcclusionSpec, Placement, Uniform
from occver.onn import Box, PositionRegion, build_onn, compose, encode_placement, input_box
from occver.verifier import (BACKEND, Query, Status, check_query, interval_bounds,
                             propagate_bounds, validate_counterexample)
from occver.verifier import _reference, backend
from occver.verifier.bounds import backward_upper, objective_weights, run_pass, split_weights
from oracles import label_reachable, random_network

KERNELS = sorted(backend.KERNELS)


def _sample(box, rng, k):
    return box.lo + rng.random((k, box.dim)) * (box.hi - box.lo)


def test_compiled_backend_is_built():
    # the editable install builds the extension; the numpy path is always present
    assert "numpy" in backend.KERNELS
    assert BACKEND in ("compiled", "numpy")


@pytest.mark.parametrize("kernel", KERNELS)
def test_identity_bounds(kernel):
    net = Network.from_arrays([np.eye(3), np.eye(3)], [np.zeros(3), np.zeros(3)])
    nb = propagate_bounds(net, Box(np.zeros(3), np.ones(3)), kernel=backend.KERNELS[kernel])
    assert np.allclose(nb.output_lower, 0) and np.allclose(nb.output_upper, 1)


@pytest.mark.parametrize("kernel", KERNELS)
def test_stable_inactive_neuron(kernel):
    net = Network.from_arrays([np.array([[1.0]]), np.array([[1.0]])], [np.array([-2.0]), np.zeros(1)])
    nb = propagate_bounds(net, Box([0.0], [1.0]), kernel=backend.KERNELS[kernel])
    assert nb.stable_inactive(0)[0]
    assert nb.output_lower[0] == 0.0 and nb.output_upper[0] == 0.0


@pytest.mark.parametrize("kernel", KERNELS)
def test_bounds_contain_samples(kernel, rng):
    for _ in range(20):
        net = random_network(rng, [4, 8, 8, 3])
        lo = rng.normal(size=4)
        box = Box(lo, lo + rng.random(4))
        nb = propagate_bounds(net, box, kernel=backend.KERNELS[kernel])
        xs = _sample(box, rng, 10_000)
        z = xs
        for t, layer in enumerate(net.layers):
            pre = z @ layer.weights.T + layer.biases
            assert np.all(pre >= nb.lower[t][None, :] - 1e-9)
            assert np.all(pre <= nb.upper[t][None, :] + 1e-9)
            z = np.maximum(pre, 0.0) if layer.relu else pre
        assert np.all(nb.lower[t] <= nb.upper[t])


def test_symbolic_no_looser_than_intervals(rng):
    for _ in range(20):
        net = random_network(rng, [5, 10, 10, 2])
        box = Box(np.zeros(5), np.ones(5))
        sym, itv = propagate_bounds(net, box), interval_bounds(net, box)
        for t in range(len(net.layers)):
            assert np.all(sym.lower[t] >= itv.lower[t] - 1e-9)
            assert np.all(sym.upper[t] <= itv.upper[t] + 1e-9)


def test_backward_bound_is_sound(rng):
    for _ in range(20):
        net = random_network(rng, [4, 10, 8, 3])
        box = Box(-np.ones(4), np.ones(4))
        coef = np.array([1.0, -1.0, 0.0])
        weights = objective_weights(net, coef)
        nb = run_pass(weights, box)
        bound, _ = backward_upper(weights, box, nb)
        vals = forward_batch(net, _sample(box, rng, 5000)) @ coef
        assert vals.max() <= bound + 1e-9


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.booleans(), st.booleans())
def test_kernels_agree(seed, use_phases, use_prior):
    if "compiled" not in backend.KERNELS:
        pytest.skip("compiled kernel not built")
    rng = np.random.default_rng(seed)
    net = random_network(rng, [int(rng.integers(2, 7)), 9, 7, 3])
    lo = rng.normal(size=net.input_dim)
    hi = lo + rng.random(net.input_dim) * rng.integers(0, 2, size=net.input_dim)
    wpos, wneg, biases = split_weights(net)
    free = np.flatnonzero(hi > lo).astype(np.intp)
    phases = [rng.integers(-1, 2, size=k).astype(np.int8) for k in (9, 7)] if use_phases else None
    prior = None
    if use_prior:
        base = propagate_bounds(net, Box(lo - 0.1, hi + 0.1))
        prior = ([np.ascontiguousarray(v) for v in base.lower[:-1]],
                 [np.ascontiguousarray(v) for v in base.upper[:-1]])
    args = (wpos, wneg, biases, lo, hi, free, phases) + (prior or (None, None))
    ref = _reference.symbolic_pass(*args)
    got = backend.KERNELS["compiled"](*args)
    for a, b in zip(ref[0] + ref[1] + [ref[2], ref[3]], got[0] + got[1] + [got[2], got[3]]):
        assert np.allclose(a, b, rtol=1e-12, atol=1e-12)
    for a, b in zip(ref[4], got[4]):
        assert np.allclose(a, b, rtol=1e-12, atol=1e-12)
    assert ref[5] == got[5]


def _const_net(q_val, l_val):
    return Network.from_arrays([np.zeros((2, 1)), np.zeros((2, 2))], [np.zeros(2), np.array([q_val, l_val])])


def test_constant_network_is_robust():
    v = check_query(Query(_const_net(1.0, 0.0), Box([0.0], [1.0]), 0, 1))
    assert v.status is Status.ROBUST and v.robust


def test_linear_case_is_nonrobust():
    # F_1 - F_0 = x - 0.5 on [0, 1]
    net = Network.from_arrays([np.array([[1.0]]), np.array([[0.0], [1.0]])],
                              [np.zeros(1), np.array([0.5, 0.0])])
    v = check_query(Query(net, Box([0.0], [1.0]), 0, 1))
    assert v.nonrobust and v.witness[0] >= 0.5 and v.margin >= 0.0
    assert v.predicted == classify(net, v.witness) or v.margin == 0.0


def test_query_validation():
    net = _const_net(1.0, 0.0)
    with pytest.raises(ValueError):
        Query(net, Box([0.0], [1.0]), 0, 0)
    with pytest.raises(ValueError):
        Query(net, Box([0.0], [1.0]), 0, 5)
    with pytest.raises(ValueError):
        Query(net, Box([0.0, 0.0], [1.0, 1.0]), 0, 1)


def test_zero_timeout_returns_timeout_verdict(rng):
    net = random_network(rng, [3, 5, 2])
    v = check_query(Query(net, Box(np.zeros(3), np.ones(3)), 0, 1, timeout=0.0))
    assert v.status is Status.TIMEOUT and v.witness is None


def _hard_query():
    # this image and label ran past a 10 s budget during development
    from occver import fixtures
    from occver.occlusion import Multiform
    from occver.orchestrator import VerificationConfig, plan_queries

    f = fixtures.network("desk_shapes")
    x = fixtures.desk_images()[3]
    bundle = build_onn(x, OcclusionSpec(2, 2, Multiform(0.2)))
    tasks = plan_queries(bundle, f, classify(f, x.flat()), VerificationConfig(timeout_per_query=30.0))
    return tasks[0].query


def test_stop_event_observed_quickly():
    query = _hard_query()
    stop = threading.Event()
    out = {}

    def run():
        out["v"] = check_query(query, stop_event=stop)
        out["t"] = time.perf_counter()

    th = threading.Thread(target=run)
    th.start()
    time.sleep(0.3)
    stop.set()
    t_set = time.perf_counter()
    th.join(10)
    if out["v"].status is Status.TIMEOUT:
        assert out["t"] - t_set <= 0.1
    else:
        pytest.skip("query finished before cancellation")


def test_deterministic_given_seed(rng):
    for _ in range(5):
        x = Image(rng.random((4, 4)))
        spec = OcclusionSpec(2, 2, Uniform(0.0), "real")
        bundle = build_onn(x, spec)
        f = random_network(rng, [16, 8, 3])
        q = classify(f, x.flat())
        net = compose(bundle, f)
        box = input_box(bundle, PositionRegion.full(4, 4))
        for l in range(3):
            if l == q:
                continue
            bis = np.zeros(net.input_dim, dtype=bool)
            bis[[0, 2]] = True
            v1 = check_query(Query(net, box, q, l, seed=7, bisect=bis))
            v2 = check_query(Query(net, box, q, l, seed=7, bisect=bis))
            assert v1.status == v2.status
            assert v1.stats["branches"] == v2.stats["branches"]
            if v1.witness is not None:
                assert np.array_equal(v1.witness, v2.witness)


def test_matches_enumeration_on_small_instances(rng):
    checked = 0
    for _ in range(15):
        m, n = (int(v) for v in rng.integers(3, 6, size=2))
        x = Image(rng.random((m, n)))
        spec = OcclusionSpec(2, 2, Uniform(float(rng.choice([0.0, 1.0]))))
        f = random_network(rng, [m * n, 8, 6, 3], scale=1.5)
        q = classify(f, x.flat())
        bundle = build_onn(x, spec)
        net = compose(bundle, f)
        box = input_box(bundle, PositionRegion.full(m, n))
        for l in range(3):
            if l == q:
                continue
            v = check_query(Query(net, box, q, l))
            assert v.status is not Status.TIMEOUT
            assert v.nonrobust == label_reachable(f, x, spec, q, l)
            if v.nonrobust:
                ok, img = validate_counterexample(net, v.witness, Query(net, box, q, l), x, spec)
                assert ok and box.contains(v.witness)
            checked += 1
    assert checked == 30


def test_robust_verdicts_survive_sampling_real_positions(rng):
    for _ in range(10):
        x = Image(rng.random((4, 4)))
        spec = OcclusionSpec(2, 2, Uniform(0.0), "real")
        bundle = build_onn(x, spec)
        f = random_network(rng, [16, 10, 3], scale=1.5)
        q = classify(f, x.flat())
        net = compose(bundle, f)
        box = input_box(bundle, PositionRegion.full(4, 4))
        bis = np.zeros(net.input_dim, dtype=bool)
        bis[[0, 2]] = True
        for l in range(3):
            if l == q:
                continue
            v = check_query(Query(net, box, q, l, bisect=bis))
            if v.robust:
                ys = forward_batch(net, _sample(box, rng, 10_000))
                assert np.max(ys[:, l] - ys[:, q]) <= 1e-6
            else:
                assert v.nonrobust and v.margin >= 0.0


def test_validate_counterexample_gates():
    x = Image(np.array([[0.4, 0.55], [0.6, 0.72]]))
    spec = OcclusionSpec(1, 1, Uniform(0.0))
    bundle = build_onn(x, spec)
    # label 1 wins once total brightness drops below 1.8
    f = Network.from_arrays([np.eye(4), np.vstack([np.ones(4), np.zeros(4)])],
                            [np.zeros(4), np.array([0.0, 1.8])])
    net = compose(bundle, f)
    box = input_box(bundle, PositionRegion.full(2, 2))
    query = Query(net, box, 0, 1)
    theta = encode_placement(bundle, Placement(1.0, 2.0))
    ok, img = validate_counterexample(net, theta, query, x, spec)
    assert ok and np.allclose(img.flat(), [0.4, 0, 0.55, 0.72])
    outside = theta.copy()
    outside[0] = 3.0
    assert validate_counterexample(net, outside, query, x, spec) == (False, None)
    fractional = theta.copy()
    fractional[0] = 1.5
    assert validate_counterexample(net, fractional, query, x, spec)[0] is False
    # occluding pixel (a=2, b=1) leaves brightness 1.72, so F_1 - F_0 = -1e-3 there
    g = Network.from_arrays([np.eye(4), np.vstack([np.ones(4), np.zeros(4)])],
                            [np.zeros(4), np.array([0.0, 1.72 - 1e-3])])
    net_g = compose(bundle, g)
    theta_g = encode_placement(bundle, Placement(2.0, 1.0))
    y = forward(net_g, theta_g)
    assert y[1] - y[0] == pytest.approx(-1e-3, abs=1e-9)
    assert validate_counterexample(net_g, theta_g, Query(net_g, box, 0, 1), x, spec) == (False, None)


def test_integer_witnesses_are_integral(rng):
    for _ in range(10):
        x = Image(rng.random((5, 5)))
        spec = OcclusionSpec(2, 2, Uniform(0.0))
        bundle = build_onn(x, spec)
        f = random_network(rng, [25, 8, 3], scale=2.0)
        q = classify(f, x.flat())
        net = compose(bundle, f)
        box = input_box(bundle, PositionRegion.full(5, 5))
        for l in range(3):
            if l != q:
                v = check_query(Query(net, box, q, l))
                if v.nonrobust:
                    assert v.witness[0] == round(v.witness[0]) and v.witness[2] == round(v.witness[2])
