"""Finite-difference checks of the analytic loss gradients."""

from __future__ import annotations

import pytest

from depthsup.core.errors import ConfigError
from depthsup.core.gradcheck import GRADCHECK_TERMS, RELATIVE_TOLERANCE, check_term, relative_error

FAST_TERMS = ["smoothness", "flow_consistency", "planar", "disparity_smoothness"]


class TestRelativeError:

    def test_symmetric_scaling(self):
        assert relative_error(1.0, 1.1) == pytest.approx(0.1 / 1.1)
        assert relative_error(-2.0, -2.0) == 0.0

    def test_floor_for_tiny_values(self):
        assert relative_error(0.0, 0.0) == 0.0
        assert relative_error(1e-12, 0.0) == pytest.approx(1e-2)


class TestCheckTerm:

    @pytest.mark.parametrize("term", FAST_TERMS)
    def test_smooth_terms_pass(self, term):
        result = check_term(term, samples=3, seed=0)
        assert result.samples == 3
        assert result.passed, result.to_dict()

    @pytest.mark.slow
    @pytest.mark.parametrize("term", ["patch", "feature", "depth_total"])
    def test_warped_terms_pass(self, term):
        result = check_term(term, samples=3, seed=1)
        assert result.passed, result.to_dict()

    @pytest.mark.slow
    @pytest.mark.parametrize("term", GRADCHECK_TERMS)
    def test_hundred_states(self, term):
        assert check_term(term, samples=100).max_relative_error < RELATIVE_TOLERANCE

    def test_unknown_term(self):
        with pytest.raises(ConfigError):
            check_term("photometric")

    def test_samples_must_be_positive(self):
        with pytest.raises(ConfigError):
            check_term("smoothness", samples=0)

    def test_result_dict(self):
        data = check_term("flow_consistency", samples=1).to_dict()
        assert data["term"] == "flow_consistency"
        assert data["tolerance"] == RELATIVE_TOLERANCE
        assert set(data) == {"term", "samples", "skipped", "max_relative_error", "tolerance", "passed"}
