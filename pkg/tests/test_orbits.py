import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ergopt.dynamics import CircleMap
from ergopt.errors import BudgetExceeded, ValidationError
from ergopt.laxcore import calibrated_preorbit, solve_subaction
from ergopt.observables import Constant, cosine
from ergopt.orbits import (
    alpha_limit_check, best_periodic_orbit, close_segment, enumerate_periodic, pseudo_orbit,
    ranked_periodic_orbits, shadow, shadow_points, verify_periodic,
)


def brute_force_best(m, F, p_max):
    """Independent oracle: scan every fixed point of T^p with exact rationals."""
    best = None
    for p in range(1, p_max + 1):
        N = m ** p - 1
        for k in range(N):
            orbit = []
            q = Fraction(k, N)
            for _ in range(p):
                orbit.append(q)
                q = (m * q) % 1
            avg = sum(F(float(x)) for x in orbit) / p
            if best is None or avg > best[0] + 1e-12:
                best = (avg, sorted(orbit))
    return best


def test_enumerate_small(doubling, shift2):
    assert [o.points for o in enumerate_periodic(doubling, 1)] == [[0.0]]
    assert [o.points for o in enumerate_periodic(doubling, 2)] == [[1 / 3, 2 / 3]]
    (o,) = enumerate_periodic(shift2, 2)
    assert o.points[0][:4] == (0, 1, 0, 1)
    assert all(o.verified for p in range(1, 9) for o in enumerate_periodic(doubling, p))


@pytest.mark.parametrize("p", range(1, 11))
def test_point_count_over_divisors(doubling, p):
    total = sum(len(o.points) for d in range(1, p + 1) if p % d == 0
                for o in enumerate_periodic(doubling, d))
    assert total == 2 ** p - 1


def test_shift_counts(shift2, golden):
    # necklace counts for 2 symbols: 2, 1, 2, 3, 6, 9
    assert [len(enumerate_periodic(shift2, p)) for p in range(1, 7)] == [2, 1, 2, 3, 6, 9]
    # golden-mean shift: periodic points of period p number trace(A^p) (Lucas numbers)
    A = np.array([[1, 1], [1, 0]])
    for p in range(1, 9):
        count = sum(len(o.points) for d in range(1, p + 1) if p % d == 0
                    for o in enumerate_periodic(golden, d))
        assert count == np.trace(np.linalg.matrix_power(A, p))


def test_budget(doubling):
    with pytest.raises(BudgetExceeded):
        enumerate_periodic(doubling, 30)
    with pytest.raises(ValidationError):
        enumerate_periodic(doubling, 0)


def test_best_orbit_examples(doubling):
    orb, avg = best_periodic_orbit(doubling, cosine(0), 8)
    assert orb.points == [0.0] and avg == 1.0
    orb, avg = best_periodic_orbit(doubling, cosine(0.5), 8)
    assert orb.points == [1 / 3, 2 / 3] and avg == pytest.approx(0.5, abs=1e-15)
    orb, avg = best_periodic_orbit(doubling, Constant(0.3), 5)
    assert avg == pytest.approx(0.3) and orb.period == 1  # tie-break: smallest period


@pytest.mark.parametrize("theta", [0.0, 0.1, 0.2, 0.3, 0.4, 0.5])
def test_best_orbit_matches_brute_force(doubling, theta):
    F = cosine(theta)
    avg_o, pts_o = brute_force_best(2, F, 8)
    orb, avg = best_periodic_orbit(doubling, F, 8)
    assert avg == pytest.approx(avg_o, abs=1e-12)
    assert sorted(orb.points) == pytest.approx([float(x) for x in pts_o], abs=1e-15)


def test_ranking_runner_up(doubling):
    (b, v1), (s, v2) = ranked_periodic_orbits(doubling, cosine(0), 6, top=2)
    assert b.points == [0.0] and v2 < v1


def test_close_segment_examples(doubling):
    po = close_segment(doubling, [1 / 3, 2 / 3])
    assert po.delta <= 1e-15 and po.jumps == []
    po = close_segment(doubling, [0.1])
    assert po.delta == pytest.approx(0.1) and po.jumps == [0] and po.gamma == doubling.e0
    po = close_segment(doubling, [0.1, 0.2, 0.4, 0.8])
    # gaps: 0.2->0.2, 0.4->0.4, 0.8->0.8 are exact; 1.6 mod 1 = 0.6 vs 0.1 gives 0.5
    assert po.delta == pytest.approx(0.5) and po.jumps == [3]
    assert po.gamma == pytest.approx(0.1)
    po = close_segment(doubling, [0.1, 0.3], jump_positions=[0])
    assert 0 in po.jumps


def test_shadow_examples(doubling):
    orb, eps = shadow(doubling, close_segment(doubling, [1 / 3, 2 / 3]))
    assert orb.points == pytest.approx([1 / 3, 2 / 3], abs=1e-12) and eps <= 1e-15
    po = close_segment(doubling, [0.32, 0.66])
    assert po.delta == pytest.approx(0.02)
    orb, eps = shadow(doubling, po)
    assert orb.period == 2 and orb.verified
    assert orb.points == pytest.approx([1 / 3, 2 / 3], abs=1e-12)
    assert eps == pytest.approx(0.04)


def test_shadow_rejects_large_delta(doubling):
    # delta = 0.1 is above (1 - lambda) e0 = 1/16 for the default branch radius
    po = close_segment(doubling, [0.1])
    with pytest.raises(ValidationError):
        shadow(doubling, po)
    # a wider branch radius inside the injectivity radius 1/4 admits it
    orb, eps = shadow(doubling, po, e0=0.2)
    assert orb.points[0] == pytest.approx(0.0, abs=1e-12) and eps == pytest.approx(0.2)
    with pytest.raises(ValidationError):
        shadow(doubling, po, e0=0.25)


def test_shadow_shift(shift2):
    x0 = shift2.periodic_point((0, 1))
    x1 = (1, 0, 1, 0, 1, 1) + (0,) * 34
    po = close_segment(shift2, [x0, x1])
    orb, eps = shadow(shift2, po)
    assert orb.period == 2 and orb.verified
    assert orb.points[0][:6] == (0, 1, 0, 1, 0, 1)


def _random_pseudo_orbit(sys_, rng, periodic):
    n = int(rng.integers(2, 51))
    delta = rng.uniform(0, (1 - sys_.lam) * sys_.e0 / 2)
    pts = [float(rng.random())]
    for _ in range(n - 1):
        pts.append(float((sys_.step(pts[-1]) + rng.uniform(-delta, delta)) % 1.0))
    if periodic:
        # close the loop by nudging the last point so its image lands within delta of x0
        target = (pts[0] + rng.uniform(-delta, delta)) % 1.0
        pts[-1] = sys_.branch_through(pts[-1], target)
        if sys_.metric(sys_.step(pts[-2]), pts[-1]) > delta:
            return None
    return pseudo_orbit(sys_, pts, periodic=periodic)


@pytest.mark.parametrize("periodic", [False, True])
def test_shadowing_bound_random(doubling, rng, periodic):
    done = 0
    while done < 50:
        po = _random_pseudo_orbit(doubling, rng, periodic)
        if po is None:
            continue
        done += 1
        ys = shadow_points(doubling, po)
        y, eps = shadow(doubling, po)
        for k in range(len(ys) - 1):
            assert doubling.metric(doubling.step(ys[k]), ys[k + 1]) <= 1e-12
        assert max(doubling.metric(a, b) for a, b in zip(ys, po.points)) <= eps + 1e-12
        if periodic:
            assert y.verified and len(po.points) % y.period == 0
            if po.gamma > 2 * eps:
                # separated pseudo-orbit points cannot share a shadowing point
                assert y.period == len(po.points)


def test_shadow_unique(doubling, rng):
    po = _random_pseudo_orbit(doubling, rng, False)
    a = shadow_points(doubling, po, 1e-12)
    b = shadow_points(doubling, po, 1e-6)
    assert max(doubling.metric(x, y) for x, y in zip(a, b)) <= 1e-9


def test_alpha_limit_examples(doubling):
    fixed = enumerate_periodic(doubling, 1)[0]
    rep = alpha_limit_check(doubling, [0.0] * 10, fixed)
    assert rep.passed and max(rep.distances) == 0
    F = cosine(0)
    sol = solve_subaction(doubling, F)
    pre = calibrated_preorbit(doubling, F, sol, 0.5, 30)
    rep = alpha_limit_check(doubling, pre, fixed)
    assert rep.passed
    d = rep.distances
    assert all(b == pytest.approx(a / 2, rel=1e-12) for a, b in zip(d[1:20], d[2:21]))
    rep = alpha_limit_check(doubling, [1 / 3, 2 / 3] * 10, fixed)
    assert not rep.passed
    with pytest.raises(ValidationError):
        alpha_limit_check(doubling, [0.1, 0.3, 0.7], fixed)


def test_verify_periodic(doubling):
    assert verify_periodic(doubling, [1 / 3, 2 / 3])
    assert not verify_periodic(doubling, [1 / 3, 2 / 3, 1 / 3, 2 / 3])  # not minimal
    assert not verify_periodic(doubling, [0.1])


def test_json_serialization(doubling):
    orb = enumerate_periodic(doubling, 3)[0]
    back = json.loads(json.dumps(orb.to_dict()))
    assert back["period"] == 3 and back["exact"]["denominator"] == 7
    po = close_segment(doubling, [0.32, 0.66])
    assert json.loads(json.dumps(po.to_dict()))["jumps"] == [0]


@given(st.integers(1, 7), st.integers(0, 10 ** 6))
def test_orbit_canonical_form(p, seed):
    sys_ = CircleMap(2)
    orbs = enumerate_periodic(sys_, p)
    o = orbs[seed % len(orbs)]
    assert o.points[0] == min(o.points)
