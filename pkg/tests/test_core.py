import numpy as np
import pytest

from labelshift.core import (
    LabelDist,
    LogitMatrix,
    ProbMatrix,
    SourceSet,
    TargetSet,
    Weights,
    class_proportions,
    validate_prob_matrix,
)
from labelshift.errors import (
    DimensionMismatch,
    LabelRange,
    NegativeEntry,
    RowSumViolation,
    ShapeMismatch,
    ZeroReferenceProp,
)


class TestValidateProbMatrix:
    def test_valid_rows_accepted_unchanged(self):
        pm = validate_prob_matrix([[0.5, 0.5], [1.0, 0.0]])
        assert np.array_equal(pm.values, [[0.5, 0.5], [1.0, 0.0]])

    def test_within_tolerance_renormalized(self):
        pm = validate_prob_matrix([[0.5000000001, 0.4999999999]], tol=1e-6)
        assert pm.values[0].sum() == pytest.approx(1.0, abs=1e-15)

    def test_row_sum_violation(self):
        with pytest.raises(RowSumViolation):
            validate_prob_matrix([[0.7, 0.7]], tol=1e-6)

    def test_negative_entry(self):
        with pytest.raises(NegativeEntry):
            validate_prob_matrix([[1.1, -0.1]], tol=1e-6)

    def test_tiny_negative_clipped(self):
        pm = validate_prob_matrix([[1.0, -1e-9]], tol=1e-6)
        assert pm.values[0, 1] == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            validate_prob_matrix([0.5, 0.5])
        with pytest.raises(ShapeMismatch):
            validate_prob_matrix(np.empty((0, 2)))

    def test_values_read_only(self):
        pm = validate_prob_matrix([[0.5, 0.5]])
        with pytest.raises(ValueError):
            pm.values[0, 0] = 0.9


class TestClassProportions:
    def test_balanced(self):
        assert np.array_equal(class_proportions([1, 1, 2, 2], 2).probs, [0.5, 0.5])

    def test_direct_count(self):
        assert np.array_equal(class_proportions([1, 1, 1, 2], 2).probs, [0.75, 0.25])

    def test_absent_class_gets_zero(self):
        assert np.array_equal(class_proportions([2, 2, 2], 3).probs, [0.0, 1.0, 0.0])

    def test_label_out_of_range(self):
        with pytest.raises(LabelRange):
            class_proportions([0, 1], 2)
        with pytest.raises(LabelRange):
            class_proportions([1, 3], 2)

    def test_output_is_valid_dist(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            k = int(rng.integers(2, 8))
            labels = rng.integers(1, k + 1, size=int(rng.integers(1, 40)))
            d = class_proportions(labels, k)
            assert d.probs.min() >= 0
            assert d.probs.sum() == pytest.approx(1.0, abs=1e-12)


class TestLabelDist:
    def test_rejects_negative(self):
        with pytest.raises(NegativeEntry):
            LabelDist([1.1, -0.1])

    def test_rejects_bad_sum(self):
        with pytest.raises(RowSumViolation):
            LabelDist([0.6, 0.6])

    def test_needs_k_at_least_two(self):
        with pytest.raises(ShapeMismatch):
            LabelDist([1.0])


class TestWeights:
    def test_from_reduced_closing_identity_exact(self):
        w = Weights.from_reduced([1.5, 0.75], LabelDist([1 / 3, 1 / 3, 1 / 3]))
        assert w.omega[-1] == pytest.approx(0.75, abs=1e-15)
        assert w.constraint_gap < 1e-12

    def test_round_trip_property(self):
        # any reduced vector + strictly positive props -> gap restored to 1e-12
        rng = np.random.default_rng(7)
        for _ in range(200):
            k = int(rng.integers(2, 9))
            props = LabelDist(rng.dirichlet(np.full(k, 5.0)))
            red = rng.normal(1.0, 2.0, size=k - 1)
            w = Weights.from_reduced(red, props)
            assert w.constraint_gap <= 1e-12

    def test_clipped_flag(self):
        w = Weights.from_reduced([2.5], LabelDist([0.5, 0.5]))
        assert w.omega[-1] == pytest.approx(-0.5)
        assert w.clipped
        assert np.array_equal(w.omega_clipped, [2.5, 0.0])

    def test_direct_construction_tolerates_constraint_gap(self):
        # regularized estimators may return weights off the constraint
        w = Weights([1.2, 0.9], LabelDist([0.5, 0.5]))
        assert w.constraint_gap == pytest.approx(0.05)
        assert not w.clipped

    def test_zero_reference_prop(self):
        with pytest.raises(ZeroReferenceProp):
            Weights.from_reduced([1.0], LabelDist([1.0, 0.0]))

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            Weights([1.0, 1.0, 1.0], LabelDist([0.5, 0.5]))

    def test_immutable(self):
        w = Weights([1.0, 1.0], LabelDist([0.5, 0.5]))
        with pytest.raises(ValueError):
            w.omega[0] = 2.0


class TestDataSets:
    def test_source_labels_stored_zero_based(self):
        s = SourceSet([[0.7, 0.3], [0.2, 0.8]], [1, 2])
        assert np.array_equal(s.labels0, [0, 1])
        assert s.n == 2 and s.k == 2

    def test_source_label_range(self):
        with pytest.raises(LabelRange):
            SourceSet([[0.7, 0.3]], [3])

    def test_label_length_mismatch(self):
        with pytest.raises(DimensionMismatch):
            SourceSet([[0.7, 0.3], [0.2, 0.8]], [1])

    def test_probs_property_rejects_logits(self):
        s = SourceSet(LogitMatrix([[1.0, -1.0]]), [1])
        with pytest.raises(ShapeMismatch):
            s.probs

    def test_target_hidden_labels_optional(self):
        t = TargetSet([[0.4, 0.6]])
        assert t.hidden_labels0 is None
        t2 = TargetSet([[0.4, 0.6]], hidden_labels=[2])
        assert np.array_equal(t2.hidden_labels0, [1])

    def test_logit_matrix_rejects_nonfinite(self):
        with pytest.raises(ShapeMismatch):
            LogitMatrix([[np.inf, 0.0]])
