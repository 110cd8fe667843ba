import numpy as np
import pytest

from magcgo.grid import make_grid, sup_norm
from magcgo.mollify import (bump_transform, derivative_constant, make_mollifier, min_tau, sharp_derivative_sup,
                            split)
from magcgo.potentials import generated_pair


def test_unit_mass_and_symbol_at_zero(grid32):
    mol = make_mollifier(grid32, 0.25)
    assert mol.mass == pytest.approx(1.0, abs=1e-13)
    assert mol.symbol[0, 0, 0] == pytest.approx(1.0, abs=1e-13)


def test_symbol_matches_continuum_transform():
    g = make_grid(1.0, 64)
    mol = make_mollifier(g, 0.5)
    for k in (1, 3, 6):
        kappa = k * g.freq_unit
        assert mol.symbol[k, 0, 0] == pytest.approx(bump_transform(0.5 * kappa), abs=2e-3)


def test_tau_limits(grid16):
    with pytest.raises(ValueError, match="resolvable"):
        make_mollifier(grid16, 0.5 * min_tau(grid16))
    with pytest.raises(ValueError):
        make_mollifier(grid16, 1.5)


def test_split_sums_back():
    g = make_grid(1.0, 32)
    P = generated_pair(g, 0.5, 1, half_width=0.5)
    sharp, flat = split(P.A, 0.25)
    assert np.abs((sharp + flat - P.A).values).max() < 1e-14


def test_split_refuses_wraparound():
    g = make_grid(1.0, 32)
    P = generated_pair(g, 0.5, 1, half_width=0.75)
    with pytest.raises(ValueError, match="wrap"):
        split(P.A, 0.5)
    split(P.A, 0.5, periodic=True)


@pytest.mark.parametrize("alpha", [(1, 0, 0), (0, 1, 1), (2, 0, 0)])
def test_sharp_derivative_young_bound(alpha):
    """||d^a (Psi_tau * A)||_inf <= tau^-|a| ||d^a Psi||_1 ||A||_inf."""
    g = make_grid(1.0, 48)
    P = generated_pair(g, 0.5, 4, half_width=0.4)
    C = derivative_constant(g, alpha)
    for tau in (0.5, 0.25):
        lhs = sharp_derivative_sup(P.A, tau, alpha)
        rhs = tau ** (-sum(alpha)) * C * sup_norm(P.A)
        assert lhs <= 1.1 * rhs


def test_flat_part_shrinks_with_tau():
    g = make_grid(1.0, 64)
    P = generated_pair(g, 0.5, 2, half_width=0.5)
    norms = [np.sqrt((np.abs(split(P.A, t)[1].values) ** 2).sum()) for t in (0.5, 0.25, 0.125, 0.0625)]
    assert all(a > b for a, b in zip(norms, norms[1:]))
