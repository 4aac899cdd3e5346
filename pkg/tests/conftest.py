import numpy as np
import pytest

from jumpbsde import ConstraintSet, JumpGrid, MarketSpec


def make_market(b=0.2, sigma=1.0, beta=(), atoms=(), weights=(), alpha=1.0,
                T=1.0, lo=-2.0, hi=2.0):
    grid = JumpGrid(x=np.asarray(atoms, dtype=float),
                    w=np.asarray(weights, dtype=float))
    return MarketSpec(b=b, sigma=sigma, beta=list(beta), grid=grid, alpha=alpha,
                      T=T, constraint=ConstraintSet(lo, hi))


@pytest.fixture
def merton_market():
    """No jumps, theta = 0.2, wide constraint interval."""
    return make_market()


@pytest.fixture
def jump_market():
    """One atom, long-only constraint."""
    return make_market(b=0.1, beta=[0.1], atoms=[0.4], weights=[0.5],
                       lo=0.0, hi=1.0)


@pytest.fixture
def two_atom_market():
    """Two atoms of mixed sign, one below the unit-size threshold."""
    return make_market(b=0.1, beta=[0.1, -0.05], atoms=[0.4, -0.6],
                       weights=[0.5, 0.3], lo=-1.0, hi=1.0)


@pytest.fixture
def sample_markets(merton_market, jump_market, two_atom_market):
    return [merton_market, jump_market, two_atom_market]
