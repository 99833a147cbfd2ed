import pytest
from hypothesis import given, strategies as st

from ergopt.dynamics import CircleMap, ShiftSpace, forward, metric, preimages, system_from_config
from ergopt.errors import TruncationError, ValidationError


def test_forward_examples(doubling):
    assert forward(doubling, 0.3, 1) == pytest.approx(0.6, abs=1e-15)
    assert forward(doubling, 1 / 3, 2) == pytest.approx(1 / 3, abs=1e-15)
    assert forward(CircleMap(3), 0.5, 1) == 0.5
    assert forward(doubling, 0.7, 0) == 0.7


def test_forward_is_composition(doubling):
    x = 0.123456
    assert forward(doubling, x, 5) == forward(doubling, forward(doubling, x, 2), 3)


def test_preimage_examples(doubling, shift2):
    assert sorted(y for y, _ in preimages(doubling, 0.5)) == [0.25, 0.75]
    assert sorted(y for y, _ in preimages(doubling, 0.0)) == [0.0, 0.5]
    w = (0, 1, 1)
    assert [y for y, _ in preimages(shift2, w)] == [(0, 0, 1, 1), (1, 0, 1, 1)]


def test_metric_examples(doubling, shift2):
    assert metric(doubling, 0.1, 0.9) == pytest.approx(0.2)
    assert metric(doubling, 0.37, 0.37) == 0.0
    assert metric(shift2, (0, 1, 1, 0), (0, 1, 1, 1)) == 0.125


def test_constants(doubling, shift2):
    assert (doubling.lam, doubling.lip, doubling.e0) == (0.5, 2.0, 0.125)
    assert (shift2.lam, shift2.lip, shift2.e0) == (0.5, 2.0, 0.5)


def test_invalid_points(doubling, golden):
    with pytest.raises(ValidationError):
        forward(doubling, 1.0, 1)
    with pytest.raises(ValidationError):
        forward(doubling, -0.1, 1)
    with pytest.raises(ValidationError):
        golden.validate((0, 1, 1))
    with pytest.raises(ValidationError):
        forward(doubling, 0.2, -1)


def test_shift_truncation(shift2):
    with pytest.raises(TruncationError):
        shift2.forward((0, 1), 2)


def test_sft_rejects_reducible():
    with pytest.raises(ValidationError):
        ShiftSpace(2, ((1, 0), (0, 1)))
    with pytest.raises(ValidationError):
        ShiftSpace(2, ((1, 2), (1, 0)))


def test_preimage_counts(tripling, shift2, golden, rng):
    for x in rng.random(50):
        assert len(tripling.preimages(float(x))) == 3
    assert len(shift2.preimages((1, 0))) == 2
    # column sums of [[1,1],[1,0]]: symbol 0 has 2 predecessors, symbol 1 has 1
    assert len(golden.preimages((0, 1))) == 2
    assert len(golden.preimages((1, 0))) == 1


def test_config_roundtrip():
    for spec in ({"kind": "circle", "m": 3}, {"kind": "shift", "symbols": 3, "lambda": 0.25, "depth": 12},
                 {"kind": "sft", "matrix": [[1, 1], [1, 0]], "lambda": 0.5, "depth": 40}):
        sys_ = system_from_config(spec)
        assert system_from_config(sys_.to_config()) == sys_
    with pytest.raises(ValidationError):
        system_from_config({"kind": "torus"})


@given(st.floats(0, 1, exclude_max=True), st.integers(2, 5))
def test_round_trip(x, m):
    sys_ = CircleMap(m)
    for y, _ in sys_.preimages(x):
        assert sys_.metric(sys_.step(y), x) <= 1e-12


@given(st.floats(0, 1, exclude_max=True), st.floats(-1, 1), st.floats(-1, 1), st.integers(2, 4))
def test_branch_contraction(x, s, t, m):
    sys_ = CircleMap(m)
    y = (x + s * sys_.e0 * 0.999) % 1.0
    z = (x + t * sys_.e0 * 0.999) % 1.0
    for i in range(m):
        Sy = sys_.inverse_branch(x, i, y)
        Sz = sys_.inverse_branch(x, i, z)
        assert sys_.metric(Sy, Sz) <= sys_.lam * sys_.metric(y, z) + 1e-12
        assert sys_.metric(sys_.step(Sy), y) <= 1e-12


@given(st.floats(0, 1, exclude_max=True), st.floats(-1, 1))
def test_forward_lipschitz(y, s):
    sys_ = CircleMap(2)
    z = (y + s * sys_.e0) % 1.0
    assert sys_.metric(sys_.step(y), sys_.step(z)) <= sys_.lip * sys_.metric(y, z) + 1e-12


@given(st.lists(st.integers(0, 1), min_size=3, max_size=12))
def test_shift_branches(word):
    sys_ = ShiftSpace(2, depth=16)
    w = tuple(word)
    for y, s in sys_.preimages(w):
        assert sys_.step(y) == w[: len(y) - 1]
        assert y[0] == s
    # inverse branches contract by lambda
    v = tuple(reversed(word))
    if w[0] == v[0]:
        for s in (0, 1):
            assert sys_.metric(sys_.inverse_branch(None, s, w), sys_.inverse_branch(None, s, v)) \
                <= sys_.lam * sys_.metric(w, v)


def test_metric_symmetric_zero_iff_equal(shift2, rng):
    from ergopt.dynamics import random_points

    pts = random_points(shift2, 20, rng)
    for a in pts:
        for b in pts:
            assert shift2.metric(a, b) == shift2.metric(b, a)
            assert (shift2.metric(a, b) == 0) == (a == b)
