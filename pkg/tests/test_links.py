import numpy as np
import pytest

from midqr.links import (
    LinkDomainError,
    get_link,
    identity_link,
    linear_link,
    log_link,
    logit_link,
)

GRIDS = {
    "identity": np.linspace(-40, 40, 41),
    "linear": np.linspace(-40, 40, 41),
    "log": np.linspace(0.05, 50, 41),
    "logit": np.linspace(0.02, 0.98, 41),
}


def _families():
    return [
        identity_link(),
        linear_link(2.5, -1.0),
        log_link(),
        log_link(offset=1.0),
        logit_link(),
    ]


@pytest.mark.parametrize("fam", _families(), ids=lambda f: f.name)
def test_inverse_round_trip(fam):
    u = GRIDS[fam.name]
    if fam.name == "log" and fam.params.get("offset", 0.0) > 0:
        u = u - 0.5  # exercise the shifted domain
    eta = fam.h(u)
    np.testing.assert_allclose(fam.h(fam.hinv(eta)), eta, atol=1e-10)
    np.testing.assert_allclose(fam.hinv(eta), u, atol=1e-10)


@pytest.mark.parametrize("fam", _families(), ids=lambda f: f.name)
def test_inverse_derivatives_match_finite_differences(fam):
    eta = fam.h(GRIDS[fam.name])
    eta = eta[np.isfinite(eta)]
    step = 1e-6 * (1.0 + np.abs(eta))
    d1_fd = (fam.hinv(eta + step) - fam.hinv(eta - step)) / (2 * step)
    np.testing.assert_allclose(fam.d1hinv(eta), d1_fd, rtol=1e-6, atol=1e-9)
    d2_fd = (fam.d1hinv(eta + step) - fam.d1hinv(eta - step)) / (2 * step)
    np.testing.assert_allclose(fam.d2hinv(eta), d2_fd, rtol=1e-5, atol=1e-8)


def test_log_domain_guard_lists_rows():
    fam = log_link()
    with pytest.raises(LinkDomainError) as err:
        fam.check_domain(np.array([1.0, -2.0, 3.0, 0.0]))
    assert err.value.rows == [1, 3]
    assert "offset" in str(err.value)


def test_logit_domain():
    fam = logit_link()
    assert fam.in_domain(0.5)
    assert not fam.in_domain(1.0)
    with pytest.raises(LinkDomainError):
        fam.check_domain(np.array([0.2, 1.4]))


def test_linear_link_requires_positive_slope():
    with pytest.raises(ValueError):
        linear_link(0.0)
    with pytest.raises(ValueError):
        linear_link(-2.0)


def test_registry():
    assert get_link("identity").name == "identity"
    assert get_link(get_link("log")).name == "log"
    with pytest.raises(ValueError, match="unknown link"):
        get_link("cauchit")
