import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st

from catmap.glm import rho
from catmap.prox import moreau_grad, moreau_rho, prox_rho, prox_rho_array

zs = st.floats(-60, 60, allow_nan=False)
lams = st.floats(1e-3, 1e3, allow_nan=False)


def _mp_prox(z, lam):
    mpmath.mp.dps = 40
    f = lambda t: t + lam / (1 + mpmath.exp(-t)) - z
    return float(mpmath.findroot(f, (z - lam, z), solver="anderson"))


def test_zero_lambda_is_identity():
    assert prox_rho(1.7, 0.0).t == 1.7


def test_reference_root_at_origin():
    # root of t + expit(t) = 0 from a 40-digit solve
    assert prox_rho(0.0, 1.0).t == pytest.approx(_mp_prox(0.0, 1.0), abs=1e-12)


def test_large_argument_shifts_by_lambda():
    assert abs(prox_rho(100.0, 2.0).t - 98.0) <= 1e-10


@pytest.mark.parametrize("z,lam", [(-5.0, 0.3), (2.5, 7.0), (40.0, 0.01), (-0.2, 300.0)])
def test_matches_arbitrary_precision_root(z, lam):
    assert prox_rho(z, lam).t == pytest.approx(_mp_prox(z, lam), abs=1e-10)


def test_grid_residual():
    Z, L = np.meshgrid(np.linspace(-50, 50, 100), np.geomspace(1e-3, 1e3, 100))
    _, worst, _ = prox_rho_array(Z, L)
    assert worst <= 1e-12


@given(zs, zs, lams)
def test_monotone_and_nonexpansive(z1, z2, lam):
    t1, t2 = prox_rho(z1, lam).t, prox_rho(z2, lam).t
    if z1 < z2:
        assert t1 <= t2
    assert abs(t1 - t2) <= abs(z1 - z2) + 1e-12


@given(st.floats(-30, 30), st.floats(1e-2, 50))
def test_reflection_identity(b, lam):
    assert prox_rho(b + lam, lam).t == pytest.approx(-prox_rho(-b, lam).t, abs=1e-10)


def test_envelope_small_lambda_limit():
    assert abs(moreau_rho(1.0, 1e-8) - float(rho(1.0))) <= 1e-6


@given(zs, lams)
def test_envelope_below_function(z, lam):
    assert moreau_rho(z, lam) <= float(rho(z)) + 1e-12


@given(st.floats(-8, 8), st.floats(0.05, 5))
def test_envelope_derivatives(z, lam):
    dz, dlam = moreau_grad(z, lam)
    h = 1e-5
    assert dz == pytest.approx((moreau_rho(z + h, lam) - moreau_rho(z - h, lam)) / (2 * h), abs=1e-6)
    assert dlam == pytest.approx((moreau_rho(z, lam + h) - moreau_rho(z, lam - h)) / (2 * h), abs=1e-6)
    t = prox_rho(z, lam).t
    assert dz == pytest.approx((z - t) / lam, abs=1e-12)


def test_invalid_inputs():
    with pytest.raises(ValueError):
        prox_rho(math.nan, 1.0)
    with pytest.raises(ValueError):
        prox_rho(0.0, -1.0)
    with pytest.raises(ValueError):
        moreau_rho(0.0, 0.0)
