"""Problem interface, LHS design and registry tests."""

import numpy as np
import pytest

from metasaea import problems
from metasaea.problems import (BoundsViolationError, EvaluatedSolution,
                               NoReferenceFrontError, ProblemRegistryError,
                               ProblemSpec, RunArchive, clip_to_bounds,
                               evaluate, lhs_sample, load_front_csv,
                               reference_front)


def test_toy_a_examples():
    problem = problems.toy_a(d=3)
    y, g = evaluate(problem, np.array([0.4, 0.1, 0.5]))
    assert np.allclose(y, [0.4, 0.6]) and np.allclose(g, [0.1])
    y, g = evaluate(problem, np.array([0.7, 0.9, 0.0]))
    assert np.allclose(y, [0.7, 0.3]) and np.allclose(g, [-0.7])


def test_toy_b_boundary():
    problem = problems.toy_b(d=3)
    y, g = evaluate(problem, np.array([0.5, 0.5, 0.5]))
    assert np.allclose(y, [0.5, 0.5]) and np.allclose(g, [0.0])


def test_evaluate_bounds_violation():
    problem = problems.toy_a(d=2)
    with pytest.raises(BoundsViolationError):
        evaluate(problem, np.array([1.2, 0.5]))
    with pytest.raises(BoundsViolationError):
        evaluate(problem, np.array([0.5, -0.01]))


def test_evaluate_deterministic():
    problem = problems.toy_b(d=4)
    x = np.array([0.3, 0.9, 0.2, 0.7])
    first = evaluate(problem, x)
    second = evaluate(problem, x)
    assert np.array_equal(first[0], second[0])
    assert np.array_equal(first[1], second[1])


def test_clip_to_bounds():
    problem = problems.toy_a(d=2)
    X = np.array([[1.5, -0.2], [0.3, 0.4]])
    clipped = clip_to_bounds(problem, X)
    assert np.array_equal(clipped, [[1.0, 0.0], [0.3, 0.4]])


def test_lhs_one_point_per_stratum_1d():
    problem = ProblemSpec(name="line", d=1, m=2, j=0,
                          lower=np.zeros(1), upper=np.ones(1),
                          objective_fn=lambda x: np.array([x[0], 1 - x[0]]))
    X = lhs_sample(4, problem, seed=0)
    strata = np.sort(np.floor(X[:, 0] * 4).astype(int))
    assert np.array_equal(strata, [0, 1, 2, 3])


def test_lhs_marginal_property_high_dim():
    problem = problems.toy_a(d=8)
    X = lhs_sample(100, problem, seed=3)
    for dim in range(8):
        bins = np.floor(X[:, dim] * 100).astype(int)
        assert np.array_equal(np.sort(bins), np.arange(100))


def test_lhs_deterministic_and_seed_sensitive():
    problem = problems.toy_a(d=5)
    assert np.array_equal(lhs_sample(20, problem, 7), lhs_sample(20, problem, 7))
    assert not np.array_equal(lhs_sample(20, problem, 7), lhs_sample(20, problem, 8))


def test_lhs_respects_bounds():
    problem = ProblemSpec(name="shifted", d=2, m=2, j=0,
                          lower=np.array([-2.0, 5.0]), upper=np.array([-1.0, 9.0]),
                          objective_fn=lambda x: np.array([x[0], x[1]]))
    X = lhs_sample(50, problem, seed=1)
    assert np.all(X >= problem.lower) and np.all(X <= problem.upper)
    with pytest.raises(ValueError):
        lhs_sample(0, problem, seed=1)


def test_reference_front_toys():
    front_a = reference_front(problems.toy_a())
    assert front_a.shape == (100, 2)
    assert np.allclose(front_a.sum(axis=1), 1.0)
    assert front_a[:, 0].min() == 0.0 and front_a[:, 0].max() == 1.0
    front_b = reference_front(problems.toy_b())
    assert front_b[:, 0].max() == 0.5


def test_reference_front_nondominated():
    for problem in (problems.toy_a(), problems.toy_b()):
        front = reference_front(problem)
        le = np.all(front[:, None, :] <= front[None, :, :], axis=-1)
        lt = np.any(front[:, None, :] < front[None, :, :], axis=-1)
        assert not np.any(le & lt)


def test_reference_front_absent():
    problem = ProblemSpec(name="anon", d=2, m=2, j=0,
                          lower=np.zeros(2), upper=np.ones(2),
                          objective_fn=lambda x: np.array([x[0], x[1]]))
    with pytest.raises(NoReferenceFrontError):
        reference_front(problem)


def test_front_validation_rejects_dominated_points():
    with pytest.raises(ValueError):
        ProblemSpec(name="bad", d=2, m=2, j=0,
                    lower=np.zeros(2), upper=np.ones(2),
                    objective_fn=lambda x: np.array([x[0], x[1]]),
                    front=np.array([[0.0, 0.0], [1.0, 1.0]]))


def test_registry_round_trip():
    assert "toy-a" in problems.available_problems()
    problem = problems.get_problem("toy-b", d=5)
    assert problem.d == 5
    with pytest.raises(ProblemRegistryError):
        problems.get_problem("unknown-problem")
    with pytest.raises(ProblemRegistryError):
        problems.register_problem("toy-a", problems.toy_a)


def test_registered_problem_sanity_checked():
    def broken(d: int = 2) -> ProblemSpec:
        return ProblemSpec(name="broken", d=d, m=2, j=0,
                           lower=np.zeros(d), upper=np.ones(d),
                           objective_fn=lambda x: np.array([np.nan, 1.0]))

    problems.register_problem("broken-for-test", broken, overwrite=True)
    with pytest.raises(ValueError):
        problems.get_problem("broken-for-test")


def test_front_csv_round_trip(tmp_path):
    path = tmp_path / "front.csv"
    path.write_text("f1,f2\n0.0,1.0\n0.5,0.5\n1.0,0.0\n")
    front = load_front_csv(path)
    assert front.shape == (3, 2)
    problem = problems.get_problem("toy-a", d=3, front_csv=path)
    assert np.array_equal(problem.front, front)
    bad = tmp_path / "bad.csv"
    bad.write_text("x1,x2\n0,1\n")
    with pytest.raises(ValueError):
        load_front_csv(bad)


def test_archive_append_only_and_cap():
    archive = RunArchive(fe_max=2)
    sol = EvaluatedSolution(x=np.zeros(2), y=np.zeros(2), g=np.zeros(1), level=1.0)
    archive.append(sol)
    archive.append(sol)
    with pytest.raises(problems.ArchiveFullError):
        archive.append(sol)
    assert len(archive) == 2
    assert archive.X.shape == (2, 2)
    assert archive.levels.shape == (2,)


def test_archive_matrices_for_unconstrained():
    archive = RunArchive()
    archive.append(EvaluatedSolution(x=np.zeros(3), y=np.ones(2),
                                     g=np.empty(0), level=1.0))
    assert archive.G.shape == (1, 0)
