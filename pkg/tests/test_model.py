import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hestonmlmc.model import (
    ModelParams,
    ParameterWarning,
    Payoff,
    PayoffKind,
    diffusion,
    diffusion_correction,
    drift,
    payoff_eval,
    validate_params,
)


def test_drift_values(paper_params):
    assert drift(paper_params, 1.0) == pytest.approx(-1.5)
    assert drift(paper_params, 0.4) == pytest.approx(0.0, abs=1e-15)
    assert abs(drift(paper_params, 1e-300)) < 1e-299


def test_diffusion_values():
    assert diffusion(ModelParams(beta=1.0), 1.0) == 1.0
    assert diffusion(ModelParams(beta=1.0), 4.0) == pytest.approx(8.0)
    assert diffusion(ModelParams(beta=0.5), 1.0) == pytest.approx(0.5)


def test_diffusion_correction_values():
    assert diffusion_correction(ModelParams(beta=1.0), 1.0) == pytest.approx(1.5)
    assert diffusion_correction(ModelParams(beta=1.0), 2.0) == pytest.approx(6.0)
    assert diffusion_correction(ModelParams(beta=2.0), 1.0) == pytest.approx(6.0)


@pytest.mark.parametrize("fn", [drift, diffusion, diffusion_correction])
@pytest.mark.parametrize("x", [0.0, -1.0, np.array([1.0, -0.5])])
def test_coefficients_reject_nonpositive(paper_params, fn, x):
    with pytest.raises(ValueError):
        fn(paper_params, x)


def test_coefficients_vectorise(paper_params):
    x = np.array([0.5, 1.0, 2.0])
    np.testing.assert_allclose(drift(paper_params, x), x * (1 - 2.5 * x))


def test_correction_matches_g_times_derivative(paper_params):
    x = np.geomspace(0.01, 100, 200)
    step = 1e-6 * x
    dg = (diffusion(paper_params, x + step) - diffusion(paper_params, x - step)) / (2 * step)
    np.testing.assert_allclose(diffusion_correction(paper_params, x), diffusion(paper_params, x) * dg, rtol=1e-8)


def test_payoffs():
    call = Payoff.call(0.05)
    assert payoff_eval(call, 1.0) == pytest.approx(0.95)
    assert payoff_eval(call, 0.05) == 0.0
    assert payoff_eval(Payoff.identity(), 3.7) == 3.7
    assert call.lipschitz_bound == Payoff.identity().lipschitz_bound == 1.0
    assert Payoff("identity").kind is PayoffKind.IDENTITY
    with pytest.raises(ValueError):
        Payoff.call(-1.0)
    with pytest.raises(ValueError):
        Payoff("put")


@given(st.floats(-50, 50), st.floats(-50, 50))
def test_payoffs_are_lipschitz(x, y):
    for phi in (Payoff.call(0.05), Payoff.identity()):
        assert abs(payoff_eval(phi, x) - payoff_eval(phi, y)) <= phi.lipschitz_bound * abs(x - y) + 1e-12


def test_validate_paper_parameters(paper_params):
    rep = validate_params(paper_params)
    assert rep.positivity_ok and rep.monotone_ok and rep.rate_theorem_ok
    assert rep.max_moment_order == pytest.approx(6.0)


@pytest.mark.parametrize("alpha, monotone, rate", [(1.0, False, False), (2.4, True, False), (2.5, True, True)])
def test_validate_flags(alpha, monotone, rate):
    rep = validate_params(ModelParams(mu=1.0, alpha=alpha, beta=1.0))
    assert (rep.monotone_ok, rep.rate_theorem_ok) == (monotone, rate)
    assert rep.positivity_ok


def test_validate_warns_but_does_not_refuse():
    p = ModelParams(alpha=1.0)
    with pytest.warns(ParameterWarning):
        validate_params(p, warn=True)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        validate_params(ModelParams(), warn=True)


def test_validate_is_deterministic(paper_params):
    assert validate_params(paper_params) == validate_params(paper_params)


@pytest.mark.parametrize("field", ["mu", "alpha", "beta", "x0", "t_end"])
@pytest.mark.parametrize("value", [0.0, -1.0, float("nan"), float("inf")])
def test_params_reject_bad_values(field, value):
    with pytest.raises(ValueError):
        ModelParams(**{field: value})


@given(st.floats(0.05, 20), st.floats(0.05, 5), st.floats(1e-6, 100))
def test_coercivity_at_max_moment_order(alpha, beta, x):
    p = ModelParams(mu=1.0, alpha=alpha, beta=beta)
    order = validate_params(p).max_moment_order
    lhs = x * drift(p, x) + 0.5 * (order - 1) * diffusion(p, x) ** 2
    assert lhs <= p.mu * x * x * (1 + 1e-12) + 1e-300
