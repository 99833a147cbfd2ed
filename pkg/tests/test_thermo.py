import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ergopt.errors import OverflowRisk, ValidationError
from ergopt.grid import GridFunction, make_grid
from ergopt.observables import Constant, DistToSet, Trig, cosine
from ergopt.thermo import beta_sweep, equilibrium_state, integrate, mass_near, transfer_apply

RES = 2 ** 12


def ones(sys, size):
    g = make_grid(sys, size)
    return GridFunction(g, np.ones(len(g.nodes)))


@pytest.mark.parametrize("beta", [0.0, 1.0, 37.5])
def test_transfer_constant(doubling, beta):
    h = ones(doubling, 256)
    assert np.allclose(transfer_apply(doubling, Constant(0.0), beta, h).values, 2.0)
    c = -0.3
    out = transfer_apply(doubling, Constant(c), beta, h).values
    assert np.allclose(out, 2 * math.exp(beta * c), rtol=1e-14)


@pytest.mark.parametrize("n", [2, 3, 5])
def test_transfer_full_shift(n):
    from ergopt.dynamics import ShiftSpace

    sys = ShiftSpace(n)
    out = transfer_apply(sys, Constant(0.0), 3.0, ones(sys, 4)).values
    assert np.array_equal(out, np.full(len(out), float(n)))


def test_transfer_matches_direct_sum(tripling):
    # oracle: sum over exact preimages with h evaluated analytically
    F = Trig([(1, 0.7, 0.1), (2, 0.2, 0.3)])
    hobs = Trig([(1, 0.5, 0.0)]) + 2.0
    grid = make_grid(tripling, 2 ** 12)
    out = transfer_apply(tripling, F, 1.3, GridFunction(grid, hobs.values(grid.nodes))).values
    xs = grid.nodes
    direct = sum(np.exp(1.3 * F.values((xs + i) / 3)) * hobs.values((xs + i) / 3) for i in range(3))
    assert np.abs(out - direct).max() < 1e-5


def test_transfer_overflow_guard(doubling):
    with pytest.raises(OverflowRisk):
        transfer_apply(doubling, cosine(0), 701.0, ones(doubling, 64))
    transfer_apply(doubling, cosine(0), 699.0, ones(doubling, 64))


def test_linear_path_overflow(doubling):
    with pytest.raises(OverflowRisk):
        equilibrium_state(doubling, cosine(0), 1000.0, RES, stabilize=False)


@pytest.mark.parametrize("beta", [0.0, 2.0, 100.0])
def test_zero_observable(doubling, beta):
    st_ = equilibrium_state(doubling, Constant(0.0), beta, RES)
    assert st_.eigenvalue == pytest.approx(2.0, rel=1e-12)
    assert st_.pressure == pytest.approx(math.log(2), abs=1e-12)
    h = st_.density.values
    assert np.ptp(h) / h.max() < 1e-12
    assert np.allclose(st_.measure_weights, 1.0 / len(h), rtol=1e-9)


def test_constant_shift_pressure(doubling):
    st_ = equilibrium_state(doubling, Constant(0.25), 3.0, RES)
    assert st_.pressure == pytest.approx(math.log(2) + 0.75, abs=1e-12)


def test_weights_normalized_and_residual(doubling):
    F = Trig([(1, 1.0, 0.0), (2, 0.3, 0.2)])
    s = equilibrium_state(doubling, F, 5.0, RES)
    assert s.converged
    assert abs(s.measure_weights.sum() - 1) < 1e-10 and s.measure_weights.min() >= 0
    # residual invariant, checked independently through the linear operator
    Lh = transfer_apply(doubling, F, 5.0, s.density).values
    rel = np.abs(Lh - s.eigenvalue * s.density.values).max() / np.abs(s.density.values).max()
    assert rel <= max(s.residual, 1e-10) * 10 * s.eigenvalue
    assert s.invariance_defect < 1e-3


def test_concentration_beta50(doubling):
    s = equilibrium_state(doubling, cosine(0), 50.0, 2 ** 16)
    assert mass_near(s, [0.0], 0.05) >= 0.9


def test_entropy_at_zero_temperature(doubling, tripling, golden, shift2):
    assert equilibrium_state(tripling, cosine(0.2), 0.0, RES).pressure == pytest.approx(math.log(3), abs=1e-8)
    phi = (1 + 5 ** 0.5) / 2
    assert equilibrium_state(golden, Constant(0.0), 0.0, 10).pressure == pytest.approx(math.log(phi), abs=1e-8)
    assert equilibrium_state(shift2, Constant(0.0), 0.0, 8).pressure == pytest.approx(math.log(2), abs=1e-8)


def test_golden_mean_uniform_parry(golden):
    # the measure of maximal entropy of the golden shift gives cylinder [1] mass 1/(1+phi^2)
    s = equilibrium_state(golden, Constant(0.0), 0.0, 10)
    phi = (1 + 5 ** 0.5) / 2
    mass1 = sum(w for word, w in zip(s.grid.nodes, s.measure_weights) if word[0] == 1)
    assert mass1 == pytest.approx(1 / (1 + phi ** 2), abs=1e-8)


@given(st.floats(-3, 3), st.floats(0.1, 20))
def test_conjugation_invariance(c, beta):
    from ergopt.dynamics import CircleMap

    sys = CircleMap(2)
    F = Trig([(1, 1.0, 0.1)])
    a = equilibrium_state(sys, F, beta, 2 ** 10)
    b = equilibrium_state(sys, F + c, beta, 2 ** 10)
    assert b.pressure - a.pressure == pytest.approx(beta * c, abs=1e-9)
    assert np.abs(a.measure_weights - b.measure_weights).max() < 1e-10


def test_pressure_convex_and_bounded(doubling):
    betas = [0.0, 0.5, 1, 2, 4, 8, 16, 32, 64, 128]
    sw = beta_sweep(doubling, cosine(0), betas, grid=RES, measure=False)
    P = np.array(sw.pressures)
    b = np.array(betas, dtype=float)
    for i in range(1, len(b) - 1):
        # second divided difference on a nonuniform schedule
        s1 = (P[i] - P[i - 1]) / (b[i] - b[i - 1])
        s2 = (P[i + 1] - P[i]) / (b[i + 1] - b[i])
        assert s2 - s1 >= -1e-8
    assert np.all(P >= b * 1.0 - 1e-9)
    assert np.all(P <= b * 1.0 + math.log(2) + 1e-9)
    slack = 2 / b[-1] * math.log(RES)
    assert abs(P[-1] / b[-1] - 1.0) <= slack


def test_sweep_flat(doubling):
    sw = beta_sweep(doubling, Constant(0.0), [1, 2, 4, 8], {"x": Trig([(1, 1.0, 0.0)])},
                    {"fixed": [0.0]}, grid=RES)
    assert all(p == sw.pressures[0] for p in sw.pressures)
    assert all(d < 1e-12 for d in sw.differences["x"])


def test_sweep_cosine_decreasing(doubling, tmp_path):
    f = DistToSet(doubling, [0.0], power=2)
    sw = beta_sweep(doubling, cosine(0), [2.0 ** k for k in range(1, 9)], {"d2": f},
                    {"fixed": [0.0]}, grid=RES)
    vals = sw.integrals["d2"]
    assert all(b < a for a, b in zip(vals, vals[1:]))
    assert sw.masses["fixed"][-1] > 0.99
    path = tmp_path / "sweep.csv"
    sw.to_csv(path)
    assert path.read_text().splitlines()[0] == "beta,pressure,integral_d2,mass_fixed"


def test_pressure_slope(doubling):
    sw = beta_sweep(doubling, cosine(0), [256.0, 1024.0], grid=2 ** 14, measure=False)
    assert sw.final_slope == pytest.approx(1.0, abs=0.01)


def test_schedule_validation(doubling):
    with pytest.raises(ValidationError):
        beta_sweep(doubling, cosine(0), [2.0, 1.0], grid=64)
    with pytest.raises(ValidationError):
        equilibrium_state(doubling, cosine(0), -1.0, 64)


def test_peak_advisory(doubling):
    s = equilibrium_state(doubling, cosine(0), 4096.0, 2 ** 8)
    assert s.warnings and s.effective_nodes < 4
    assert not equilibrium_state(doubling, cosine(0), 0.0, 2 ** 8).warnings


def test_atom_scaling_matches_local_dimension(doubling):
    # mass of the node at the fixed point shrinks like G**(-dim), dim = (P - beta F(0)) / log 2
    small = equilibrium_state(doubling, cosine(0), 1.0, 2 ** 8)
    big = equilibrium_state(doubling, cosine(0), 1.0, 2 ** 12)
    dim = (big.pressure - 1.0) / math.log(2)
    ratio = big.measure_weights[0] / small.measure_weights[0]
    assert ratio == pytest.approx(16.0 ** (-dim), rel=0.02)


def test_integrate_constant(doubling):
    s = equilibrium_state(doubling, cosine(0.3), 3.0, RES)
    assert integrate(s, Constant(2.5)) == pytest.approx(2.5, abs=1e-12)
