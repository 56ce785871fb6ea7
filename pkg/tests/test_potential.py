import numpy as np
import pytest

from glfield.errors import ConvexityError, ValidationError
from glfield.potential import Potential, dipole_gas, from_spec, quadratic, validate


def test_quadratic_values():
    p = quadratic()
    assert p.V(2.0) == 2.0
    assert p.dV(-3.0) == -3.0
    assert np.all(p.d2V(np.linspace(-5, 5, 11)) == 1.0)
    assert (p.c_minus, p.c_plus) == (1.0, 1.0)


def test_dipole_values():
    p = dipole_gas(0.5)
    assert p.d2V(0.0) == pytest.approx(0.5)
    assert p.d2V(np.pi) == pytest.approx(1.5)
    assert p.V(0.0) == 0.5
    assert (p.c_minus, p.c_plus) == (0.5, 1.5)


@pytest.mark.parametrize("a", [1.2, -1.0, 1.0, np.nan])
def test_dipole_convexity_error(a):
    with pytest.raises(ConvexityError):
        dipole_gas(a)


@pytest.mark.parametrize("p", [quadratic(), dipole_gas(0.5), dipole_gas(-0.3), dipole_gas(0.9)])
def test_shipped_potentials_validate_wide(p):
    rep = validate(p, 50.0, 1e-3)
    assert rep.passed
    assert rep.max_symmetry_defect <= 1e-12


def test_validate_ranges():
    assert validate(quadratic(), 10, 1e-3).d2V_min == 1.0
    rep = validate(dipole_gas(0.3), 10, 1e-3)
    assert rep.d2V_min == pytest.approx(0.7, abs=1e-6)
    assert rep.d2V_max == pytest.approx(1.3, abs=1e-6)


def test_asymmetric_potential_rejected():
    bad = Potential("skew", {}, V=lambda x: 0.5 * x ** 2 + 0.01 * x ** 3,
                    dV=lambda x: x + 0.03 * x ** 2, d2V=lambda x: 1 + 0.06 * x,
                    c_minus=0.5, c_plus=1.5)
    with pytest.raises(ValidationError) as err:
        validate(bad, 1.0, 0.25)
    assert "symmetry" in str(err.value)
    assert "x = -1" in str(err.value)


def test_wrong_derivative_rejected():
    bad = Potential("wrong", {}, V=lambda x: 0.5 * x ** 2, dV=lambda x: 1.01 * x,
                    d2V=lambda x: np.ones_like(x), c_minus=1, c_plus=1)
    with pytest.raises(ValidationError, match="finite differences"):
        validate(bad, 2.0, 0.5)


def test_dipole_zero_is_quadratic():
    x = np.linspace(-50, 50, 10001)
    q, d = quadratic(), dipole_gas(0.0)
    for f, g in ((q.V, d.V), (q.dV, d.dV), (q.d2V, d.d2V)):
        assert np.max(np.abs(f(x) - g(x))) <= 1e-15


def test_spec_round_trip():
    p = from_spec(dipole_gas(0.25).spec())
    assert p.params == {"a": 0.25}
