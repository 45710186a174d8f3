import numpy as np
import pytest

from mleig import (Coefficients, assemble_pencil, build_space, convection_model,
                   generate_unit_square)


@pytest.fixture(scope="session")
def model_coeffs():
    """The convection model -laplace(u) + (1, 1/2) . grad u = lambda u."""
    return convection_model((1.0, 0.5))


@pytest.fixture(scope="session")
def unit_coeffs():
    """Symmetric pure-Laplace coefficients (identity, no convection)."""
    return Coefficients.constant()


@pytest.fixture(scope="session")
def lam1_exact():
    return 5.0 / 16.0 + 2.0 * np.pi ** 2


@pytest.fixture(scope="session")
def square4():
    return generate_unit_square(4)


@pytest.fixture(scope="session")
def space4_p1(square4):
    return build_space(square4, 1)


@pytest.fixture(scope="session")
def pencil4_p1(space4_p1, model_coeffs):
    return assemble_pencil(space4_p1, model_coeffs)
