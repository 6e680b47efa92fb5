import numpy as np
import pytest

from labelshift.core import LabelDist, ProbMatrix, SourceSet, TargetSet, Weights, class_proportions
from labelshift.errors import (
    ConfigError,
    DegenerateDenominator,
    EmptyClass,
    SingularMatrix,
    SingularSystem,
    ZeroReferenceProp,
    ZeroSourceProp,
)
from labelshift.estimators import (
    ConfusionMatrix,
    ElsaConfig,
    _fixed_point_step,
    _reduction_system,
    complete_weights,
    confusion_matrix,
    elsa_solve,
    h_elsa,
    mlls_em,
    moment_match_solve,
    solve_bbse,
    solve_rlls,
    target_mean,
)
from labelshift.simulate import MixtureSpec, generate_mixture, posterior_matrix


def oracle_sets(k=3, n=5000, m=5000, seed=0, target_probs=None, radius=2.0):
    """Mixture data with exact posteriors; target posteriors are the SOURCE
    posterior evaluated at target draws (the trained-model emulation)."""
    spec = MixtureSpec.ring(k, radius=radius)
    tdist = spec.source_prior if target_probs is None else LabelDist(target_probs)
    _, ys, Ps = generate_mixture(spec, spec.source_prior, n, seed=seed)
    Xt, yt, _ = generate_mixture(spec, tdist, m, seed=seed + 771)
    Pt = posterior_matrix(spec, spec.source_prior, Xt)
    truth = tdist.probs / spec.source_prior.probs
    return SourceSet(Ps, ys), TargetSet(Pt, hidden_labels=yt), truth


class TestConfusionMatrix:
    def test_soft_by_hand(self):
        source = SourceSet([[0.7, 0.3], [0.4, 0.6]], [1, 2])
        C = confusion_matrix(source, "soft")
        assert np.allclose(C.values, [[0.35, 0.20], [0.15, 0.30]], atol=1e-15)

    def test_hard_identity_classifier(self):
        source = SourceSet([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]], [1, 1, 2, 2])
        C = confusion_matrix(source, "hard")
        assert np.allclose(C.values, np.diag([0.5, 0.5]))

    def test_hard_tie_breaks_to_lower_index(self):
        source = SourceSet([[0.9, 0.1], [0.5, 0.5]], [1, 2])
        C = confusion_matrix(source, "hard")
        assert C.values[0, 1] == 0.5  # tie row predicted as class 1, true class 2
        assert C.values[1, 1] == 0.0

    def test_columns_sum_to_props(self):
        rng = np.random.default_rng(1)
        for mode in ("soft", "hard"):
            rows = rng.dirichlet(np.ones(4), size=60)
            labels = np.concatenate([np.arange(1, 5), rng.integers(1, 5, 56)])
            source = SourceSet(rows, labels)
            C = confusion_matrix(source, mode)
            props = class_proportions(labels, 4).probs
            assert np.allclose(C.values.sum(axis=0), props, atol=1e-12)
            assert C.values.sum() == pytest.approx(1.0, abs=1e-9)

    def test_empty_class(self):
        source = SourceSet([[0.7, 0.3], [0.6, 0.4]], [1, 1])
        with pytest.raises(EmptyClass):
            confusion_matrix(source, "soft")


class TestTargetMean:
    def test_soft_constant_rows(self):
        t = TargetSet([[0.25, 0.75]] * 4)
        assert np.allclose(target_mean(t, "soft"), [0.25, 0.75])

    def test_hard_counts_argmaxes(self):
        t = TargetSet([[0.9, 0.1]] * 3 + [[0.2, 0.8]])
        assert np.allclose(target_mean(t, "hard"), [0.75, 0.25])

    def test_soft_equals_hard_on_one_hot(self):
        t = TargetSet([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
        assert np.allclose(target_mean(t, "soft"), target_mean(t, "hard"))


class TestSolveBBSE:
    def test_two_by_two_by_elimination(self):
        C = ConfusionMatrix([[0.4, 0.1], [0.1, 0.4]])
        w = solve_bbse(C, [0.3, 0.7])
        assert np.allclose(w.omega, [1 / 3, 5 / 3], atol=1e-12)
        assert w.constraint_gap < 1e-12

    def test_no_shift_perfect_classifier(self):
        C = ConfusionMatrix(np.diag([0.3, 0.7]))
        w = solve_bbse(C, [0.3, 0.7])
        assert np.allclose(w.omega, [1.0, 1.0], atol=1e-14)

    def test_rank_one_singular(self):
        C = ConfusionMatrix([[0.25, 0.25], [0.25, 0.25]])
        with pytest.raises(SingularMatrix):
            solve_bbse(C, [0.5, 0.5])

    def test_negative_entries_flagged_not_clipped(self):
        C = ConfusionMatrix([[0.4, 0.35], [0.1, 0.15]])
        w = solve_bbse(C, [0.2, 0.8])
        assert w.clipped == bool(np.any(w.omega < 0))


class TestSolveRLLS:
    def test_zero_lambda_reduces_to_bbse(self):
        C = ConfusionMatrix([[0.4, 0.1], [0.1, 0.4]])
        w = solve_rlls(C, [0.3, 0.7], 0.0)
        assert np.allclose(w.omega, [1 / 3, 5 / 3], atol=1e-12)

    def test_huge_lambda_shrinks_to_ones(self):
        C = ConfusionMatrix([[0.4, 0.1], [0.1, 0.4]])
        w = solve_rlls(C, [0.3, 0.7], 1e12)
        assert np.allclose(w.omega, [1.0, 1.0], atol=1e-9)

    def test_no_shift_is_ones_for_every_lambda(self):
        C = ConfusionMatrix([[0.35, 0.15], [0.15, 0.35]])
        mu = C.values @ np.ones(2)
        for lam in (0.0, 1e-3, 0.5, 10.0):
            w = solve_rlls(C, mu, lam)
            assert np.allclose(w.omega, [1.0, 1.0], atol=1e-12)

    def test_negative_lambda_rejected(self):
        C = ConfusionMatrix([[0.4, 0.1], [0.1, 0.4]])
        with pytest.raises(ConfigError):
            solve_rlls(C, [0.3, 0.7], -0.1)


class TestMLLS:
    def test_uninformative_rows_fixed_point_in_one_iteration(self):
        props = LabelDist([0.4, 0.6])
        rows = ProbMatrix([[0.4, 0.6]] * 10)
        w, state = mlls_em(rows, props, return_state=True)
        assert np.allclose(w.omega, [1.0, 1.0], atol=1e-15)
        assert state.iterations == 1 and state.converged

    def test_boundary_solution_against_grid_oracle(self):
        props = LabelDist([0.5, 0.5])
        rows = ProbMatrix([[0.8, 0.2]] * 50)
        # oracle: maximize mean log(0.8 w1 + 0.2 w2) s.t. 0.5 w1 + 0.5 w2 = 1
        grid = np.linspace(0.0, 2.0, 20001)
        obj = np.log(0.8 * grid + 0.2 * (2.0 - grid))
        w_star = grid[np.argmax(obj)]
        assert w_star == pytest.approx(2.0)
        w = mlls_em(rows, props, tol=1e-10, max_iter=5000)
        assert abs(w.omega[0] - 2.0) < 1e-6
        assert abs(w.omega[1] - 0.0) < 1e-6

    def test_loglik_non_decreasing_on_random_instances(self):
        rng = np.random.default_rng(2)
        for trial in range(20):
            k = int(rng.integers(2, 6))
            rows = ProbMatrix(rng.dirichlet(np.ones(k), size=200))
            props = LabelDist(rng.dirichlet(np.ones(k) * 4))
            _, state = mlls_em(rows, props, return_state=True)
            diffs = np.diff(np.asarray(state.loglik))
            assert np.all(diffs >= -1e-12)

    def test_constraint_holds(self):
        rng = np.random.default_rng(3)
        rows = ProbMatrix(rng.dirichlet(np.ones(3), size=300))
        props = LabelDist([0.2, 0.5, 0.3])
        w = mlls_em(rows, props)
        assert w.constraint_gap < 1e-9

    def test_zero_source_prop_rejected(self):
        rows = ProbMatrix([[0.5, 0.5]])
        with pytest.raises(ZeroSourceProp):
            mlls_em(rows, LabelDist([1.0, 0.0]))


def constrained_ls_oracle(C, mu, props):
    """Minimize ||C w - mu||^2 subject to props @ w = 1 via the KKT system."""
    k = C.shape[0]
    kkt = np.zeros((k + 1, k + 1))
    kkt[:k, :k] = 2.0 * C.T @ C
    kkt[:k, k] = props
    kkt[k, :k] = props
    rhs = np.concatenate([2.0 * C.T @ mu, [1.0]])
    return np.linalg.solve(kkt, rhs)[:k]


def informative_instance(k, n, m, seed, boost=6.0):
    """Posterior-like rows correlated with labels (classifier-ish), so the
    soft confusion matrix is well-conditioned."""
    rng = np.random.default_rng(seed)
    ys = np.concatenate([np.arange(1, k + 1), rng.integers(1, k + 1, n - k)])
    alphas = np.ones(k) + boost * np.eye(k)
    Ps = np.vstack([rng.dirichlet(alphas[y - 1]) for y in ys])
    yt = rng.integers(1, k + 1, m)
    Pt = np.vstack([rng.dirichlet(alphas[y - 1]) for y in yt])
    return SourceSet(Ps, ys), TargetSet(Pt)


class TestMomentMatching:
    def test_one_dimensional_by_hand(self):
        # k=2: (1/2) w1 * 1 = 0.75  ->  w = (1.5, 0.5)
        w = moment_match_solve([[1.0], [0.0]], [[0.75]], [1, 2], LabelDist([0.5, 0.5]))
        assert np.allclose(w.omega, [1.5, 0.5], atol=1e-12)

    def test_no_shift_fixed_point(self):
        rng = np.random.default_rng(4)
        h = rng.normal(size=(40, 2))
        labels = np.concatenate([[1, 2, 3], rng.integers(1, 4, 37)])
        props = class_proportions(labels, 3)
        w = moment_match_solve(h, h, labels, props)
        assert np.allclose(w.omega, np.ones(3), atol=1e-10)

    @pytest.mark.parametrize("k", [2, 3, 5])
    def test_posterior_columns_reproduce_constrained_bbse_soft(self, k):
        for seed in range(10):
            source, target = informative_instance(k, 200, 200, seed=100 * k + seed)
            props = class_proportions(source.labels0 + 1, k)
            w_mm = moment_match_solve(source.probs.values[:, :-1], target.probs.values[:, :-1],
                                      source.labels0 + 1, props)
            C = confusion_matrix(source, "soft")
            mu = target_mean(target, "soft")
            w_bbse = solve_bbse(C, mu)
            w_oracle = constrained_ls_oracle(C.values, mu, props.probs)
            assert np.max(np.abs(w_mm.omega - w_bbse.omega)) < 1e-8
            assert np.max(np.abs(w_mm.omega - w_oracle)) < 1e-8

    def test_singular_system(self):
        h = np.ones((10, 1))  # constant h cannot identify anything beyond the mean
        labels = [1, 2] * 5
        with pytest.raises(SingularSystem):
            moment_match_solve(h * 0.0, h * 0.0, labels, LabelDist([0.5, 0.5]))

    def test_empty_class(self):
        with pytest.raises(EmptyClass):
            moment_match_solve([[1.0], [0.5]], [[0.4]], [1, 1], LabelDist([0.5, 0.5]))

    def test_constraint_invariant_random(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            k = int(rng.integers(2, 6))
            n = 100
            labels = np.concatenate([np.arange(1, k + 1), rng.integers(1, k + 1, n - k)])
            h_s = rng.normal(size=(n, k - 1))
            h_t = rng.normal(size=(60, k - 1))
            w = moment_match_solve(h_s, h_t, labels, class_proportions(labels, k))
            assert w.constraint_gap < 1e-9


class TestCompleteWeights:
    def test_no_shift(self):
        w = complete_weights([1.0], LabelDist([0.5, 0.5]))
        assert np.allclose(w.omega, [1.0, 1.0])
        assert not w.clipped

    def test_three_class_arithmetic(self):
        w = complete_weights([1.5, 0.75], LabelDist([1 / 3, 1 / 3, 1 / 3]))
        assert w.omega[2] == pytest.approx(0.75, abs=1e-12)

    def test_negative_closure_sets_flag(self):
        w = complete_weights([2.5], LabelDist([0.5, 0.5]))
        assert w.omega[1] == pytest.approx(-0.5)
        assert w.clipped

    def test_zero_reference(self):
        with pytest.raises(ZeroReferenceProp):
            complete_weights([1.0], LabelDist([1.0, 0.0]))


class TestHElsa:
    def test_symmetric_row_is_zero(self):
        out = h_elsa([0.5, 0.5], np.array([1.0, 1.0]), 0.5)
        assert out[0] == pytest.approx(0.0, abs=1e-15)

    def test_by_hand_denominator(self):
        # E{w^2|x} = 4*.6 + .25*.4 = 2.5 ; E{w|x} = 2*.6 + .5*.4 = 1.4
        # D = 2.5/.5 + 1.4/.5 = 7.8 ; mu = .2
        out = h_elsa([0.6, 0.4], np.array([2.0, 0.5]), 0.5)
        assert out[0] == pytest.approx(0.2 / 7.8, abs=1e-12)

    def test_unit_weights_give_quarter_damping(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            row = rng.dirichlet(np.ones(4))
            out = h_elsa(row, np.ones(4), 0.5)
            mu = row[:-1] - row[-1]
            assert np.allclose(out, mu / 4.0, atol=1e-14)

    def test_accepts_weights_object(self):
        w = Weights([2.0, 0.5], LabelDist([1 / 3, 2 / 3]))
        out = h_elsa([0.6, 0.4], w, 0.5)
        assert out[0] == pytest.approx(0.2 / 7.8, abs=1e-12)

    def test_degenerate_denominator(self):
        with pytest.raises(DegenerateDenominator):
            h_elsa([0.5, 0.5], np.zeros(2), 0.5)

    def test_pi_validated(self):
        with pytest.raises(ConfigError):
            h_elsa([0.5, 0.5], np.ones(2), 1.0)


class TestElsaSolve:
    def test_no_shift_identity(self):
        source, target, _ = oracle_sets(k=3, n=800, m=800, seed=1)
        target_copy = TargetSet(source.probs)
        w, state = elsa_solve(source, target_copy)
        assert state.converged
        assert np.max(np.abs(w.omega - 1.0)) < 1e-6

    def test_monte_carlo_recovery(self):
        # planted omega = (1.5, 0.75, 0.75); >= 95% of 100 seeded replications
        # land within 0.1 in the max norm
        hits = 0
        for rep in range(100):
            source, target, truth = oracle_sets(
                k=3, n=5000, m=5000, seed=1000 + rep, target_probs=[0.5, 0.25, 0.25])
            w, state = elsa_solve(source, target)
            if np.max(np.abs(w.omega - truth)) <= 0.1:
                hits += 1
        assert hits >= 95

    def test_solvers_agree(self):
        for rep in range(5):
            source, target, _ = oracle_sets(k=3, n=1500, m=1500, seed=50 + rep,
                                            target_probs=[0.45, 0.3, 0.25])
            w_fp, st_fp = elsa_solve(source, target, ElsaConfig(tol=1e-12, max_iter=2000))
            w_ls, st_ls = elsa_solve(source, target, ElsaConfig(solver="least_squares"))
            assert st_fp.solver == "fixed_point" and st_ls.solver == "least_squares"
            assert np.max(np.abs(w_fp.omega - w_ls.omega)) <= 1e-5

    def test_equation_residual_reported_small(self):
        source, target, _ = oracle_sets(k=4, n=2000, m=2000, seed=9,
                                        target_probs=[0.4, 0.3, 0.2, 0.1])
        w, state = elsa_solve(source, target)
        assert state.converged
        assert state.equation_residual < 1e-6 * source.k

    def test_constraint_invariant(self):
        source, target, _ = oracle_sets(k=5, n=1000, m=1200, seed=21,
                                        target_probs=[0.3, 0.25, 0.2, 0.15, 0.1])
        w, _ = elsa_solve(source, target)
        assert w.constraint_gap < 1e-9

    def test_pi_override(self):
        source, target, _ = oracle_sets(k=2, n=900, m=300, seed=33, target_probs=[0.6, 0.4])
        w_def, st_def = elsa_solve(source, target)
        assert st_def.pi == pytest.approx(900 / 1200)
        w_ovr, st_ovr = elsa_solve(source, target, ElsaConfig(pi=0.5))
        assert st_ovr.pi == 0.5
        # both still solve their equations; estimates stay close
        assert np.max(np.abs(w_def.omega - w_ovr.omega)) < 0.2

    def test_empty_class_rejected(self):
        source = SourceSet([[0.7, 0.3], [0.6, 0.4]], [1, 1])
        target = TargetSet([[0.5, 0.5]])
        with pytest.raises(EmptyClass):
            elsa_solve(source, target)


class TestFixedPointStep:
    def test_scale_invariance_in_h(self):
        rng = np.random.default_rng(8)
        n, m, k = 60, 50, 4
        labels0 = np.concatenate([np.arange(k), rng.integers(0, k, n - k)])
        props = np.bincount(labels0, minlength=k) / n
        A, v = _reduction_system(labels0, props)
        hs = rng.normal(size=(n, k - 1))
        ht = rng.normal(size=(m, k - 1))
        base = _fixed_point_step(hs, ht, A, v, n, m, ridge=0.0)
        for c in (1e-4, 0.1, 10.0, 1e5):
            scaled = _fixed_point_step(c * hs, c * ht, A, v, n, m, ridge=0.0)
            assert np.max(np.abs(scaled - base)) <= 1e-12 * max(1.0, np.max(np.abs(base)))

    def test_reduction_system_encodes_weight_of_label(self):
        rng = np.random.default_rng(11)
        k, n = 4, 30
        labels0 = np.concatenate([np.arange(k), rng.integers(0, k, n - k)])
        props = np.bincount(labels0, minlength=k) / n
        A, v = _reduction_system(labels0, props)
        red = rng.normal(1.0, 0.5, size=k - 1)
        omega = np.append(red, (1.0 - red @ props[:-1]) / props[-1])
        assert np.allclose(A @ red + v, omega[labels0], atol=1e-12)
