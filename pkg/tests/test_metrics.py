"""Metric semantics against the brute-force oracles and edge contracts."""

import numpy as np
import pytest

import promptseg.metrics as mx
from promptseg.errors import ContractError
from promptseg.rng import CounterRng

from promptseg._oracles import (e_measure_oracle, pr_oracle, s_measure_oracle,
                                weighted_f_oracle)


def random_case(seed, h=6, w=6, binary_pred=False):
    r = CounterRng(seed, 11)
    gt = (r.uniforms(h * w) > 0.55).astype(np.float64).reshape(h, w)
    pred = r.uniforms(h * w).reshape(h, w)
    if binary_pred:
        pred = (pred > 0.5).astype(np.float64)
    return pred, gt


# -- mae ------------------------------------------------------------------------

def test_mae_examples():
    gt = (CounterRng(1, 1).uniforms(16) > 0.5).astype(np.float64).reshape(4, 4)
    assert mx.mae(gt, gt) == 0.0
    assert mx.mae(np.full((4, 4), 0.5), gt) == pytest.approx(0.5)
    assert mx.mae(1.0 - gt, gt) == pytest.approx(1.0)


def test_mae_monotone_under_pointwise_departure():
    pred, gt = random_case(3)
    worse = np.clip(pred + 0.2 * np.where(gt == 1.0, -1.0, 1.0), 0.0, 1.0)
    # clip keeps every pixel at least as far from gt as before
    assert mx.mae(worse, gt) >= mx.mae(pred, gt)


# -- s-measure --------------------------------------------------------------------

def test_s_measure_perfect_and_degenerate():
    _, gt = random_case(5)
    assert mx.s_measure(gt, gt) == pytest.approx(1.0, abs=1e-6)
    zero = np.zeros((5, 5))
    assert mx.s_measure(np.full((5, 5), 0.2), zero) == pytest.approx(0.8)
    ones = np.ones((5, 5))
    assert mx.s_measure(np.full((5, 5), 0.3), ones) == pytest.approx(0.3)


def test_s_measure_rejects_soft_gt():
    with pytest.raises(ContractError):
        mx.s_measure(np.zeros((3, 3)), np.full((3, 3), 0.4))


def test_s_measure_matches_oracle():
    for seed in range(12):
        pred, gt = random_case(100 + seed, h=4 + seed % 5, w=4 + (seed * 3) % 5)
        assert mx.s_measure(pred, gt) == pytest.approx(s_measure_oracle(pred, gt), abs=1e-10)


# -- e-measure --------------------------------------------------------------------

def test_e_measure_perfect_binary():
    _, gt = random_case(7)
    assert mx.e_measure_mean(gt, gt) == pytest.approx(1.0, abs=1e-6)


def test_e_measure_inverted_low():
    _, gt = random_case(8, h=4, w=4)
    assert mx.e_measure_mean(1.0 - gt, gt) <= 0.25 + 1e-9


def test_e_measure_matches_oracle():
    for seed in range(10):
        pred, gt = random_case(200 + seed, h=4 + seed % 4, w=5)
        assert mx.e_measure_mean(pred, gt) == pytest.approx(e_measure_oracle(pred, gt), abs=1e-8)
    # constant prediction vs half-foreground mask, from the oracle
    gt = np.zeros((4, 4))
    gt[:2] = 1.0
    pred = np.full((4, 4), 0.5)
    assert mx.e_measure_mean(pred, gt) == pytest.approx(e_measure_oracle(pred, gt), abs=1e-10)


# -- weighted F -------------------------------------------------------------------

def test_weighted_f_perfect_and_zero():
    _, gt = random_case(9)
    assert mx.weighted_f(gt, gt) == pytest.approx(1.0, abs=1e-6)
    gt2 = np.zeros((8, 8))
    gt2[3:5, 3:5] = 1.0  # interior foreground
    assert mx.weighted_f(np.zeros((8, 8)), gt2) == pytest.approx(0.0, abs=1e-12)


def test_weighted_f_matches_oracle():
    for seed in range(10):
        pred, gt = random_case(300 + seed, h=8, w=8)
        if gt.sum() == 0:
            gt[2, 2] = 1.0
        assert mx.weighted_f(pred, gt) == pytest.approx(weighted_f_oracle(pred, gt), abs=1e-8)


# -- pr curve ---------------------------------------------------------------------

def test_pr_perfect_prediction():
    _, gt = random_case(11)
    curve = mx.pr_curve([gt], [gt])
    for thr, p, r in curve:
        assert p == pytest.approx(1.0, abs=1e-6)
        assert r == pytest.approx(1.0, abs=1e-6)


def test_pr_recall_monotone():
    pred, gt = random_case(12)
    curve = mx.pr_curve([pred], [gt])
    recalls = [r for _, _, r in curve]
    assert all(b <= a + 1e-12 for a, b in zip(recalls, recalls[1:]))


def test_pr_matches_oracle_single_2x2():
    pred = np.array([[0.2, 0.8], [0.6, 0.4]])
    gt = np.array([[0.0, 1.0], [1.0, 0.0]])
    got = mx.pr_curve([pred], [gt])
    want = pr_oracle([pred], [gt])
    for (t1, p1, r1), (t2, p2, r2) in zip(got, want):
        assert t1 == t2 and p1 == pytest.approx(p2, abs=1e-12) and r1 == pytest.approx(r2, abs=1e-12)


# -- aggregation / report -----------------------------------------------------------

def test_fuzzed_metrics_stay_in_unit_interval():
    for seed in range(60):
        pred, gt = random_case(400 + seed, h=5, w=7)
        for v in (mx.s_measure(pred, gt), mx.e_measure_mean(pred, gt),
                  mx.weighted_f(pred, gt), mx.mae(pred, gt)):
            assert 0.0 <= v <= 1.0, (seed, v)


def test_evaluate_maps_gt_as_prediction():
    gts = [random_case(500 + s)[1] for s in range(4)]
    rep = mx.evaluate_maps(gts, gts)
    assert rep.s_alpha == pytest.approx(1.0, abs=1e-6)
    assert rep.e_phi == pytest.approx(1.0, abs=1e-6)
    assert rep.f_beta_w == pytest.approx(1.0, abs=1e-6)
    assert rep.mae == 0.0
    assert rep.n_images == 4
    assert len(rep.pr_curve) == 256


def test_report_schema_validates():
    import jsonschema
    gts = [random_case(600)[1]]
    rep = mx.evaluate_maps(gts, gts)
    jsonschema.validate(rep.to_dict(), mx.REPORT_SCHEMA)


def test_mae_and_pr_permutation_symmetric():
    pred, gt = random_case(700, h=5, w=5)
    r = CounterRng(701, 2)
    perm = r.permutation(25)
    pred_p = pred.reshape(-1)[perm].reshape(5, 5)
    gt_p = gt.reshape(-1)[perm].reshape(5, 5)
    assert mx.mae(pred_p, gt_p) == pytest.approx(mx.mae(pred, gt), abs=1e-15)
    a = mx.pr_curve([pred], [gt])
    b = mx.pr_curve([pred_p], [gt_p])
    for (t1, p1, r1), (t2, p2, r2) in zip(a, b):
        assert p1 == p2 and r1 == r2
