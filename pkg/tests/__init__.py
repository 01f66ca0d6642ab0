"""Tests for the beta_risk package."""
