import itertools

import numpy as np
import pytest

from occver.model import Network, classify, forward
from occver.naive import (EQ_TOL, NaiveEncoding, UnsupportedModeError, assignment_for, build_naive,
                          emit_smtlib, eval_constraints, model_placement, parse_model, run_solver,
                          solver_path)
from occver.occlusion import Image, Multiform, OcclusionSpec, Placement, Uniform
from occver.onn import PositionRegion, build_onn, compose, input_box
from occver.verifier import Query, check_query
from oracles import flips_anywhere, random_instance, random_network

needs_solver = pytest.mark.skipif(solver_path() is None, reason="OCC_SMT_SOLVER not set")


def _example():
    x = Image(np.array([[0.4, 0.55], [0.6, 0.72]]))
    f = Network.from_arrays([np.eye(4), np.vstack([np.ones(4), np.zeros(4)])],
                            [np.zeros(4), np.array([0.0, 1.8])])
    return x, f, OcclusionSpec(1, 1, Uniform(0.0))


def _satisfiable_by_enumeration(enc, f, x, spec):
    r = enc.region
    for a in range(int(np.ceil(r.a_lo)), int(np.floor(r.a_hi)) + 1):
        for b in range(int(np.ceil(r.b_lo)), int(np.floor(r.b_hi)) + 1):
            if eval_constraints(enc, assignment_for(enc, f, x, spec, Placement(float(a), float(b)))):
                return True
    return False


def test_pixel_constraint_count():
    x, f, spec = _example()
    enc = build_naive(x, f, spec, None, 0)
    assert len(enc.pixels) == 4
    assert isinstance(enc, NaiveEncoding)


def test_one_disjunct_per_other_label(rng):
    f = random_network(rng, [4, 5, 7])
    enc = build_naive(Image(rng.random((2, 2))), f, OcclusionSpec(1, 1, Uniform(0.0)), None, 3)
    assert len(enc.adversarial.args) == 6


def test_label_flipping_assignment_satisfies():
    x, f, spec = _example()
    enc = build_naive(x, f, spec, None, 0)
    env = assignment_for(enc, f, x, spec, Placement(1.0, 2.0))
    assert env["xp_1_2_0"] == 0.0
    assert eval_constraints(enc, env)


def test_unoccluded_image_does_not_satisfy():
    x, f, spec = _example()
    enc = build_naive(x, f, spec, None, 0)
    env = assignment_for(enc, f, x, spec, Placement(1.0, 2.0))
    # put the original pixel back while keeping the placement: pixel rule breaks
    env["xp_1_2_0"] = 0.6
    assert not eval_constraints(enc, env)


def test_perturbed_pixel_violates():
    x, f, spec = _example()
    enc = build_naive(x, f, spec, None, 0)
    env = assignment_for(enc, f, x, spec, Placement(1.0, 2.0))
    env["xp_2_2_0"] += 10 * EQ_TOL
    assert not eval_constraints(enc, env)


def test_fractional_position_rejected():
    x, f, spec = _example()
    enc = build_naive(x, f, spec, None, 0)
    env = assignment_for(enc, f, x, spec, Placement(1.0, 2.0))
    env["a"] = 1.5
    assert not eval_constraints(enc, env)


def test_incomplete_assignment_raises():
    x, f, spec = _example()
    enc = build_naive(x, f, spec, None, 0)
    env = assignment_for(enc, f, x, spec, Placement(1.0, 2.0))
    del env["z_1_0"]
    with pytest.raises(KeyError):
        eval_constraints(enc, env)


@pytest.mark.parametrize("spec", [OcclusionSpec(1, 1, Multiform(0.1)),
                                  OcclusionSpec(1, 1, Uniform(0.0), "real")])
def test_unsupported_modes(spec):
    x, f, _ = _example()
    with pytest.raises(UnsupportedModeError):
        build_naive(x, f, spec, None, 0)


def test_emission_is_byte_stable(rng):
    f, x, spec = random_instance(rng)
    q = classify(f, x.flat())
    one = emit_smtlib(build_naive(x, f, spec, None, q))
    two = emit_smtlib(build_naive(x, f, spec, None, q))
    assert one == two
    assert "(set-logic QF_LRA)" in one and one.rstrip().endswith("(get-model)")
    assert one.count("(declare-fun ") == len(build_naive(x, f, spec, None, q).variables)


def test_encoding_matches_enumeration(rng):
    for _ in range(25):
        f, x, spec = random_instance(rng, max_relus=12, max_side=5)
        q = classify(f, x.flat())
        enc = build_naive(x, f, spec, None, q)
        assert _satisfiable_by_enumeration(enc, f, x, spec) == flips_anywhere(f, x, spec)


def test_encoding_respects_region(rng):
    for _ in range(10):
        f, x, spec = random_instance(rng, max_relus=12, max_side=5)
        q = classify(f, x.flat())
        region = PositionRegion(1.0, 2.0, 2.0, 3.0)
        enc = build_naive(x, f, spec, region, q)
        assert _satisfiable_by_enumeration(enc, f, x, spec) == flips_anywhere(f, x, spec, region)
        env = assignment_for(enc, f, x, spec, Placement(3.0, 1.0))
        assert not eval_constraints(enc, env)


def test_verifier_witness_satisfies_encoding(rng):
    found = 0
    for _ in range(30):
        f, x, spec = random_instance(rng, max_relus=12, max_side=5)
        q = classify(f, x.flat())
        bundle = build_onn(x, spec)
        net = compose(bundle, f)
        box = input_box(bundle, PositionRegion.full(x.m, x.n))
        enc = build_naive(x, f, spec, None, q)
        for l in range(f.output_dim):
            if l == q:
                continue
            v = check_query(Query(net, box, q, l))
            if v.nonrobust:
                lay = bundle.input_layout
                place = Placement(float(v.witness[lay["a"]]), float(v.witness[lay["b"]]))
                assert eval_constraints(enc, assignment_for(enc, f, x, spec, place))
                found += 1
    assert found > 0


def test_parse_model_reads_rationals():
    text = "(\n (define-fun a () Real 2.0)\n (define-fun z_1_0 () Real (- (/ 3.0 4.0)))\n)"
    assert parse_model(text) == {"a": 2.0, "z_1_0": -0.75}
    place = model_placement({"a": 2.0000000001, "b": 1.0})
    assert (place.a, place.b) == (2.0, 1.0)


@needs_solver
def test_solver_unsat_on_constant_network():
    x = Image(np.full((2, 2), 0.5))
    f = Network.from_arrays([np.zeros((2, 4)), np.zeros((2, 2))], [np.zeros(2), np.array([1.0, 0.0])])
    res = run_solver(emit_smtlib(build_naive(x, f, OcclusionSpec(1, 1, Uniform(0.0)), None, 0)))
    assert res.status == "unsat"


@needs_solver
def test_solver_model_is_a_counterexample():
    x, f, spec = _example()
    enc = build_naive(x, f, spec, None, 0)
    res = run_solver(emit_smtlib(enc))
    assert res.status == "sat"
    place = model_placement(res.model)
    assert eval_constraints(enc, assignment_for(enc, f, x, spec, place))
    assert eval_constraints(enc, res.model)


@needs_solver
def test_solver_agrees_with_enumeration(rng):
    for _ in range(3):
        f, x, spec = random_instance(rng, max_relus=8, max_side=3)
        q = classify(f, x.flat())
        res = run_solver(emit_smtlib(build_naive(x, f, spec, None, q)), timeout=120)
        assert res.status == ("sat" if flips_anywhere(f, x, spec) else "unsat")
