import json
import math

import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from wsod_pgt.losscheck import FixtureError, load_fixtures, run_all
from wsod_pgt.losses import (
    Anchor,
    BagLossInput,
    LossDomainError,
    ProposalCluster,
    RPNBatchInput,
    frcnn_loss,
    pcl_bag_loss,
    rpn_loss,
    smooth_l1,
    smooth_l1_grad,
)

probs = st.floats(0.01, 1.0)
reals = st.floats(-5, 5)
vec4 = st.tuples(reals, reals, reals, reals)


@pytest.mark.parametrize("x, expected", [(0, 0), (1, 0.5), (-1, 0.5), (2, 1.5), (0.5, 0.125), (-3, 2.5)])
def test_smooth_l1_values(x, expected):
    assert smooth_l1(x) == expected


@given(st.floats(-1e6, 1e6))
def test_smooth_l1_even(x):
    assert smooth_l1(x) == smooth_l1(-x)


@pytest.mark.parametrize("x, g", [(0.3, 0.3), (-0.3, -0.3), (2.0, 1.0), (-2.0, -1.0)])
def test_smooth_l1_grad(x, g):
    assert smooth_l1_grad(x) == g


def test_smooth_l1_continuous_at_one():
    assert smooth_l1(1 - 1e-12) == pytest.approx(smooth_l1(1 + 1e-12), abs=1e-11)


def test_frcnn_examples():
    assert frcnn_loss([1.0, 0.0], 0, (9, 9, 9, 9), (0, 0, 0, 0)) == 0.0
    assert frcnn_loss([0.0, 1.0], 1, (1, 2, 3, 4), (1, 2, 3, 4)) == 0.0
    assert frcnn_loss([0.5, 0.5], 1, (0.5, 0, 0, 0), (0, 0, 0, 0)) == pytest.approx(math.log(2) + 0.125, abs=1e-9)


def test_frcnn_errors():
    with pytest.raises(LossDomainError):
        frcnn_loss([1.0, 0.0], 1, (0, 0, 0, 0), (0, 0, 0, 0))
    with pytest.raises(ValueError):
        frcnn_loss([0.7, 0.7], 0, (0, 0, 0, 0), (0, 0, 0, 0))
    with pytest.raises(ValueError):
        frcnn_loss([1.0], 1, (0, 0, 0, 0), (0, 0, 0, 0))
    with pytest.raises(ValueError):
        frcnn_loss([1.0], 0, (0, 0, 0), (0, 0, 0, 0))


@given(probs, vec4, vec4, st.floats(0, 3))
def test_frcnn_nonnegative_and_reduces_to_log(p1, t, v, lam):
    p = [1.0 - p1, p1]
    loss = frcnn_loss(p, 1, t, v, lam)
    assert loss >= 0.0
    assert frcnn_loss(p, 1, t, t, lam) == -math.log(p1)
    if p1 < 1.0:
        assert frcnn_loss(p, 0, t, v, lam) == -math.log(1.0 - p1)


def test_rpn_examples():
    assert rpn_loss(RPNBatchInput([Anchor(1.0, 1, (1, 2, 3, 4), (1, 2, 3, 4))], 1, 1)) == 0.0
    neg = RPNBatchInput([Anchor(0.5, 0, (5, 5, 5, 5), (0, 0, 0, 0))], 4, 1, lam=123.0)
    assert rpn_loss(neg) == pytest.approx(math.log(2) / 4, abs=1e-15)


@pytest.mark.parametrize("anchor", [Anchor(0.0, 1), Anchor(1.0, 0)])
def test_rpn_domain_errors(anchor):
    with pytest.raises(LossDomainError):
        rpn_loss(RPNBatchInput([anchor], 1, 1))


@given(st.lists(st.tuples(st.floats(0.01, 0.99), st.integers(0, 1), vec4, vec4), min_size=1, max_size=6),
       st.floats(0.5, 10), st.floats(0.5, 10))
def test_rpn_normalization(rows, n_cls, n_reg):
    anchors = [Anchor(p, y, t, s) for p, y, t, s in rows]
    once = rpn_loss(RPNBatchInput(anchors, n_cls, n_reg))
    twice = rpn_loss(RPNBatchInput(anchors * 2, 2 * n_cls, 2 * n_reg))
    assert twice == pytest.approx(once, rel=1e-12, abs=1e-12)


@given(st.lists(st.tuples(st.floats(0.01, 0.99), vec4, vec4), min_size=1, max_size=6))
def test_rpn_negatives_have_no_reg_term(rows):
    anchors = [Anchor(p, 0, t, s) for p, t, s in rows]
    zeroed = [Anchor(p, 0) for p, _, _ in rows]
    assert rpn_loss(RPNBatchInput(anchors, 3, 1, 5.0)) == rpn_loss(RPNBatchInput(zeroed, 3, 1, 0.0))


def test_bag_examples():
    assert pcl_bag_loss(BagLossInput(1, [ProposalCluster(1.0, [1.0])])) == 0.0
    assert pcl_bag_loss(BagLossInput(1, (), [1.0], [1.0])) == 0.0
    two = BagLossInput(2, [ProposalCluster(0.5, [0.8, 0.6])])
    assert pcl_bag_loss(two) == pytest.approx(-0.5 * math.log(0.7), abs=1e-9)


def test_bag_domain_and_contract_errors():
    with pytest.raises(LossDomainError):
        pcl_bag_loss(BagLossInput(2, [ProposalCluster(1.0, [0.0, 1.0])]))
    with pytest.raises(LossDomainError):
        pcl_bag_loss(BagLossInput(1, (), [1.0], [0.0]))
    with pytest.raises(ValueError):
        BagLossInput(3, [ProposalCluster(1.0, [0.5])])
    with pytest.raises(ValueError):
        BagLossInput(1, (), [1.0, 1.0], [1.0])
    with pytest.raises(ValueError):
        ProposalCluster(1.0, [])


@given(
    st.lists(st.tuples(st.floats(0.1, 1), st.lists(st.floats(0.05, 1), min_size=1, max_size=4)), max_size=3),
    st.lists(st.tuples(st.floats(0.1, 1), st.floats(0.05, 1)), max_size=3),
)
def test_bag_zero_iff_all_scores_one(clusters, background):
    n = sum(len(m) for _, m in clusters) + len(background)
    assume(n > 0)
    inp = BagLossInput(n, [ProposalCluster(s, m) for s, m in clusters],
                       [w for w, _ in background], [s for _, s in background])
    loss = pcl_bag_loss(inp)
    all_one = all(sum(m) / len(m) == 1.0 for _, m in clusters) and all(s == 1.0 for _, s in background)
    assert loss >= 0.0
    assert (loss == 0.0) == all_one


def test_shipped_checks_pass():
    results = run_all()
    assert results and all(r.passed for r in results), [r.line() for r in results if not r.passed]


@pytest.mark.parametrize(
    "text",
    [
        "not json",
        "[]",
        '{"kernel": "smooth_l1"}',
        '[{"kernel": "nope", "args": {}, "expected": 0}]',
        '[{"kernel": "smooth_l1"}]',
        '[{"kernel": "smooth_l1", "args": {}, "expected": 0}]',
    ],
)
def test_bad_fixture_files(text):
    with pytest.raises(FixtureError):
        run_all(text)


def test_wrong_expectation_is_reported_not_raised():
    cases = load_fixtures()
    case = next(c for c in cases if "expected" in c)
    bad = json.dumps([{"kernel": case["kernel"], "args": case["args"], "expected": 1e9}])
    results = run_all(bad)
    assert not results[0].passed and all(r.passed for r in results[1:])
