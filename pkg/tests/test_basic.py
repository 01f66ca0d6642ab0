"""Test basic functionality of the beta_risk package."""

import beta_risk


def test_version():
    """Test that the package has a version."""
    assert hasattr(beta_risk, "__version__")
    assert isinstance(beta_risk.__version__, str)
    assert len(beta_risk.__version__) > 0


def test_public_names_resolve():
    for name in beta_risk.__all__:
        assert getattr(beta_risk, name) is not None
