"""Acceptance gate: one test per criterion, each printing a pass/fail line.

The heavyweight guidance-sanity criterion trains the meta-policy for 300
episodes and dominates the suite runtime; everything else finishes in seconds
to a few minutes.
"""

from __future__ import annotations

import time

import numpy as np
import pytest

import metasaea.neurocompute as nc
from metasaea import diffusion as diff
from metasaea import harness, meta, problems, saea, surrogate
from metasaea.ela import ELAConfig, StateEncoder
from metasaea.mmcci import (AnchorSet, CCIParams, LevelGrid, analytic_max_cci,
                            fit_cci_params, max_cci_level)
from metasaea.saea import GenConfig


def _report(num: int, name: str, detail: str = ""):
    print(f"[PASS] criterion {num:02d} {name}" + (f": {detail}" if detail else ""))


# -- criterion 1 -------------------------------------------------------------

def test_criterion_01_calibration_theorem_suite():
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    grid = LevelGrid(40)
    for _ in range(1000):
        p = CCIParams(alpha=rng.uniform(1, 4), beta=rng.uniform(1, 4),
                      c=rng.uniform(0.1, 10))
        # boundary consistency, exact
        g_neg = -rng.uniform(0, 10)
        assert analytic_max_cci(g_neg, p) == 1.0
        assert max_cci_level(g_neg, p, grid) == 1.0
        # strict monotonicity on the violated side
        v1 = rng.uniform(1e-3, 5.0)
        v2 = v1 * rng.uniform(1.001, 3.0)
        lam1, lam2 = analytic_max_cci(v1, p), analytic_max_cci(v2, p)
        assert lam1 > lam2
        # grid/analytic sandwich within one grid step
        lam_grid = max_cci_level(v1, p, grid)
        assert lam_grid <= lam1 + 1e-12
        assert lam1 - lam_grid < 1.0 / grid.k + 1e-12
        # nonnegative second difference over an equally spaced triple
        step = rng.uniform(1e-3, 2.0)
        la = analytic_max_cci(v1, p)
        lb = analytic_max_cci(v1 + step, p)
        lc = analytic_max_cci(v1 + 2 * step, p)
        assert la - 2 * lb + lc >= -1e-9
    elapsed = time.perf_counter() - t0
    assert elapsed < 10.0
    _report(1, "calibration theorem suite", f"1000 cases in {elapsed:.2f}s")


# -- criterion 2 -------------------------------------------------------------

def test_criterion_02_worked_value():
    p = CCIParams(1.0, 2.0, 1.0)
    assert max_cci_level(1.0, p, LevelGrid(40)) == 0.375
    exact = (3.0 - np.sqrt(5.0)) / 2.0
    assert abs(analytic_max_cci(1.0, p) - exact) <= 1e-9
    _report(2, "worked value", "grid 0.375 exact, root within 1e-9")


# -- criterion 3 -------------------------------------------------------------

def _violations_hitting_anchors(alpha: float, beta: float, c: float) -> np.ndarray:
    """21 sorted values whose linear-interpolation quantiles at the anchor
    levels equal the tight calibrated-violation values exactly."""
    anchors = AnchorSet()
    targets = {0.95: None, 0.75: None, 0.50: None, 0.25: None, 0.05: None}
    for r, lam in zip(anchors.quantiles, anchors.targets):
        targets[r] = c * (1.0 - lam) ** beta / lam**alpha
    # index = r * (n - 1) is integral for n = 21 at these quantile levels
    idx_value = {19: targets[0.95], 15: targets[0.75], 10: targets[0.50],
                 5: targets[0.25], 1: targets[0.05]}
    pts = np.empty(21)
    known = sorted(idx_value.items())
    pts[0] = known[0][1] * 0.5
    for (i1, v1), (i2, v2) in zip(known, known[1:]):
        for i in range(i1, i2 + 1):
            pts[i] = v1 + (v2 - v1) * (i - i1) / (i2 - i1)
    pts[20] = known[-1][1] * 2.0
    return pts


def test_criterion_03_anchor_fit_round_trip():
    t0 = time.perf_counter()
    fit = fit_cci_params(_violations_hitting_anchors(1.0, 2.0, 1.0))
    assert abs(fit.params.alpha - 1.0) <= 1e-6
    assert abs(fit.params.beta - 2.0) <= 1e-6
    assert abs(fit.params.c - 1.0) <= 1e-6
    fallback = fit_cci_params(np.array([0.2, 0.8]))  # median 0.5
    assert fallback.used_fallback
    assert (fallback.params.alpha, fallback.params.beta) == (1.0, 2.0)
    assert abs(fallback.params.c - 2.0 * 0.5) <= 1e-12
    elapsed = time.perf_counter() - t0
    assert elapsed < 1.0
    _report(3, "anchor fit round trip", f"{elapsed * 1e3:.0f}ms")


# -- criterion 4 -------------------------------------------------------------

def _fd_check(params: list[nc.Tensor], forward, rng, rel_tol=1e-4, step=1e-5):
    """Central finite differences on every entry of every parameter."""
    out = forward()
    weights = rng.standard_normal(out.data.shape)

    def loss_value() -> float:
        with nc.no_grad():
            return float(np.sum(forward().data * weights))

    loss = nc.sum_all(nc.mul(forward(), nc.constant(weights)))
    for p in params:
        p.zero_grad()
    nc.backward(loss)
    for p in params:
        flat = p.data.ravel()
        g = p.grad.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_value()
            flat[i] = orig - step
            down = loss_value()
            flat[i] = orig
            num = (up - down) / (2 * step)
            denom = max(abs(num), abs(g[i]), 1e-6)
            assert abs(num - g[i]) / denom <= rel_tol, (num, g[i])


def test_criterion_04_gradient_checks():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)

    def rand_shape():
        return (int(rng.integers(1, 5)), int(rng.integers(1, 5)))

    for trial in range(20):
        n, k = rand_shape()
        m = int(rng.integers(1, 5))

        # matmul + broadcast add (linear layer)
        a = nc.parameter(rng.standard_normal((n, k)))
        w = nc.parameter(rng.standard_normal((k, m)))
        b = nc.parameter(rng.standard_normal(m))
        _fd_check([a, w, b], lambda: nc.add(nc.matmul(a, w), b), rng)

        # elementwise mul and sub
        u = nc.parameter(rng.standard_normal((n, k)))
        v = nc.parameter(rng.standard_normal((n, k)))
        _fd_check([u, v], lambda: nc.mul(nc.sub(u, v), u), rng)

        # relu, inputs kept away from the kink
        raw = rng.standard_normal((n, k))
        raw[np.abs(raw) < 1e-2] += 0.5
        r = nc.parameter(raw)
        _fd_check([r], lambda: nc.relu(r), rng)

        # softmax
        s = nc.parameter(rng.standard_normal((n, k)))
        _fd_check([s], lambda: nc.softmax(s, axis=-1), rng)

        # layer norm
        x = nc.parameter(rng.standard_normal((n, 2 * k)))
        gain = nc.parameter(rng.standard_normal(2 * k))
        bias = nc.parameter(rng.standard_normal(2 * k))
        _fd_check([x, gain, bias], lambda: nc.layer_norm(x, gain, bias), rng)

        # attention with output projection, both head counts
        heads = 1 if trial % 2 == 0 else 2
        h = 4
        q = nc.parameter(rng.standard_normal((n, h)))
        kk = nc.parameter(rng.standard_normal((n, h)))
        vv = nc.parameter(rng.standard_normal((n, h)))
        _fd_check([q, kk, vv], lambda: nc.attention(q, kk, vv, heads=heads), rng)

        # mean/sum reductions and mse
        t = nc.parameter(rng.standard_normal((n, k)))
        _fd_check([t], lambda: nc.mean(t, axis=0), rng)
        target = rng.standard_normal((n, k))
        _fd_check([t], lambda: nc.mse(t, nc.constant(target)), rng)

        # per-row gather
        qv = nc.parameter(rng.standard_normal((n, 6)))
        idx = rng.integers(0, 6, size=n)
        _fd_check([qv], lambda: nc.take_per_row(qv, idx), rng)

    elapsed = time.perf_counter() - t0
    assert elapsed < 60.0
    _report(4, "gradient checks", f"20 shape draws x 9 ops in {elapsed:.1f}s")


# -- criterion 5 -------------------------------------------------------------

def test_criterion_05_encoder_invariances():
    rng = np.random.default_rng(11)
    encoder = StateEncoder(ELAConfig(), np.random.default_rng(5))
    for _ in range(50):
        n = int(rng.integers(2, 60))
        m = int(rng.integers(2, 5))
        Y = rng.standard_normal((n, m)) * rng.uniform(0.5, 20)
        levels = rng.random(n)
        base = encoder.encode(Y, levels, n, 4 * n).embedding
        perm = rng.permutation(n)
        permuted = encoder.encode(Y[perm], levels[perm], n, 4 * n).embedding
        assert np.abs(base - permuted).max() <= 1e-9
        col = int(rng.integers(0, m))
        Y_aff = Y.copy()
        Y_aff[:, col] = rng.uniform(0.1, 5.0) * Y_aff[:, col] + rng.uniform(-3, 3)
        affine = encoder.encode(Y_aff, levels, n, 4 * n).embedding
        assert np.abs(base - affine).max() <= 1e-9
    for n in (1, 10, 200):
        for m in (2, 3, 5):
            Y = rng.standard_normal((n, m))
            state = encoder.encode(Y, rng.random(n), n, 300 + n)
            vec = state.vector()
            assert vec.shape == (ELAConfig().hidden + 1,)
            assert np.all(np.isfinite(vec))
    _report(5, "encoder invariances", "permutation/affine within 1e-9; shapes hold")


# -- criterion 6 -------------------------------------------------------------

def test_criterion_06_diffusion_distribution():
    t0 = time.perf_counter()
    lower, upper = np.zeros(2), np.ones(2)
    config = diff.DiffusionConfig()  # default schedule, 200 epochs
    errors = []
    for seed in range(10):
        rng = np.random.default_rng(seed)
        data = diff.normalize(rng.normal(0.3, 0.1, size=(64, 2)), lower, upper)
        model, _ = diff.train(data, config, rng)
        samples = diff.sample(model, 256, lower, upper, rng)
        errors.append(np.abs(samples.mean(axis=0) - 0.3))
    median_err = np.median(np.array(errors), axis=0)
    assert np.all(median_err <= 0.15)
    elapsed = time.perf_counter() - t0
    assert elapsed < 300.0
    _report(6, "diffusion distribution",
            f"median coord errors {median_err.round(4)} in {elapsed:.1f}s")


# -- criterion 7 -------------------------------------------------------------

def test_criterion_07_gp_interpolation():
    # Kernel-compatible draws at an amplitude where the noise floor is truly
    # a floor; the marginal-likelihood grid then lands in the interpolation
    # regime on every dataset.
    rng = np.random.default_rng(23)
    from metasaea.surrogate import _kernel, _sq_dists
    for _ in range(20):
        d = int(rng.integers(1, 4))
        X = rng.random((30, d))
        ls0 = rng.choice([0.05, 0.1, 0.2]) * np.sqrt(d)
        K0 = _kernel(_sq_dists(X, X), 1.0, ls0) + 1e-12 * np.eye(30)
        sample = np.linalg.cholesky(K0) @ rng.standard_normal(30)
        y = rng.uniform(-2, 2) + 100.0 * sample / sample.std()
        model = surrogate.fit(X, y)
        pred = surrogate.predict_mean(model, X)
        span = y.max() - y.min()
        assert np.abs(pred - y).max() <= 1e-3 * max(span, 1e-12)
    _report(7, "gp interpolation", "20 datasets within 1e-3 of target range")


# -- criterion 8 -------------------------------------------------------------

def _brute_force_fronts(P: np.ndarray) -> list[list[int]]:
    remaining = set(range(len(P)))
    fronts = []
    while remaining:
        fr = [i for i in remaining
              if not any(np.all(P[j] <= P[i]) and np.any(P[j] < P[i])
                         for j in remaining if j != i)]
        fronts.append(sorted(fr))
        remaining -= set(fr)
    return fronts


def test_criterion_08_sorting_oracle_equivalence():
    rng = np.random.default_rng(31)
    for _ in range(100):
        n = int(rng.integers(1, 201))
        m = int(rng.integers(2, 5))
        # integer grids make ties and duplicates common
        P = rng.integers(0, 8, size=(n, m)).astype(float)
        got = [sorted(f) for f in saea.fast_nondominated_sort(P)]
        assert got == _brute_force_fronts(P)
    _report(8, "sorting oracle equivalence", "100 instances, exact")


# -- criterion 9 -------------------------------------------------------------

def test_criterion_09_inner_loop_convergence():
    t0 = time.perf_counter()
    problem = problems.toy_a(d=8)
    bundle = surrogate.OracleBundle(problem, use_constraints=False)
    front = problems.reference_front(problem)
    igds = []
    for seed in range(10):
        p_init = problems.lhs_sample(50, problem, seed=1000 + seed)
        pop = saea.run_inner(p_init, bundle, GenConfig(),
                             np.random.default_rng(seed))
        Y = np.array([ind.pred_y for ind in pop])
        igds.append(harness.igd(Y, front))
    median = float(np.median(igds))
    assert median <= 0.05
    elapsed = time.perf_counter() - t0
    assert elapsed < 30.0
    _report(9, "inner-loop convergence", f"median IGD {median:.4f} in {elapsed:.1f}s")


# -- shared scaled-down episode configuration --------------------------------

def _fast_episode_config(seed: int = 0, **kw) -> harness.EpisodeConfig:
    """Full-budget episode with a lighter diffusion training schedule."""
    return harness.EpisodeConfig(
        seed=seed, diffusion=diff.DiffusionConfig(epochs=20), **kw)


# -- criterion 10 ------------------------------------------------------------

def test_criterion_10_budget_and_feasibility():
    problem = problems.toy_b(d=8)
    finals = []
    feasible_runs = 0
    for seed in range(10):
        archive = harness.run_baseline(problem, _fast_episode_config(seed),
                                       mode="random_policy")
        assert len(archive) == 300
        feasible = harness.feasible_nondominated(archive)
        if feasible.shape[0]:
            feasible_runs += 1
        finals.append(archive.cycle_log[-1].igd)
    assert feasible_runs >= 9
    median = float(np.median([v for v in finals if v is not None]))
    assert median <= 0.10
    _report(10, "budget and feasibility",
            f"feasible in {feasible_runs}/10 seeds, median IGD {median:.4f}")


# -- criterion 11 ------------------------------------------------------------

GUIDANCE_EPISODES = 300
GUIDANCE_SEED = 2025


def train_guidance_policy() -> meta.TrainResult:
    """The scaled trend check: 300 episodes on the two toy problems with two
    rollout workers; diffusion epochs and the update cadence are reduced via
    their config knobs to stay inside the runtime budget."""
    train_problems = [problems.toy_a(d=8), problems.toy_b(d=8)]
    dqn = meta.DQNConfig(updates_per_step=0.5)
    return meta.train_meta(train_problems, episodes=GUIDANCE_EPISODES, workers=2,
                           seed=GUIDANCE_SEED, episode_config=_fast_episode_config(),
                           dqn_config=dqn)


def eval_policy_igd(policy_factory, seeds) -> list[float]:
    problem = problems.toy_b(d=8)
    finals = []
    for seed in seeds:
        archive = harness.run_episode(problem, _fast_episode_config(seed),
                                      policy_factory())
        finals.append(archive.cycle_log[-1].igd)
    return finals


@pytest.mark.slow
def test_criterion_11_guidance_sanity():
    t0 = time.perf_counter()
    result = train_guidance_policy()
    assert len(result.rewards) == GUIDANCE_EPISODES
    early = float(np.nanmean(result.sliding_avg[:50]))
    late = float(np.nanmean(result.sliding_avg[-50:]))
    assert late > early, (early, late)

    eval_seeds = range(10_001, 10_011)
    trained = eval_policy_igd(
        lambda: meta.NetworkPolicy(result.policy, epsilon=0.0), eval_seeds)
    random_base = eval_policy_igd(lambda: meta.RandomPolicy(), eval_seeds)
    med_trained = float(np.median(trained))
    med_random = float(np.median(random_base))
    assert med_trained <= med_random, (med_trained, med_random)
    elapsed = time.perf_counter() - t0
    assert elapsed < 7200.0
    _report(11, "guidance sanity",
            f"sliding reward {early:.3f}->{late:.3f}, "
            f"IGD trained {med_trained:.4f} vs random {med_random:.4f}, "
            f"{elapsed / 60:.0f} min")


# -- criterion 12 ------------------------------------------------------------

def _tight_toy_b(d: int = 8) -> problems.ProblemSpec:
    return problems.ProblemSpec(
        name="toy-b-tight", d=d, m=2, j=1,
        lower=np.zeros(d), upper=np.ones(d),
        objective_fn=lambda x: np.array([x[0], 1.0 - x[0]]),
        constraint_fn=lambda x: np.array([x[0] - 0.05]),
        front=np.column_stack([np.linspace(0, 0.05, 100),
                               1.0 - np.linspace(0, 0.05, 100)]))


def test_criterion_12_ablation_time_to_feasible():
    problem = _tight_toy_b()
    firsts = {"mmcci": [], "cv": []}
    for seed in range(10):
        config = _fast_episode_config(seed, fe_max=150, until_feasible=True)
        for label, mode in (("mmcci", "random_policy"), ("cv", "cv")):
            archive = harness.run_baseline(problem, config, mode=mode)
            first = harness.evaluations_to_first_feasible(archive)
            assert first is not None
            firsts[label].append(first)
    med_mmcci = float(np.median(firsts["mmcci"]))
    med_cv = float(np.median(firsts["cv"]))
    assert med_mmcci <= med_cv, firsts
    _report(12, "ablation time to feasible",
            f"median evals-to-feasible {med_mmcci:.1f} (level-first) "
            f"vs {med_cv:.1f} (cv)")


# -- criterion 13 ------------------------------------------------------------

def test_criterion_13_determinism(tmp_path):
    problem = problems.toy_b(d=8)
    config = _fast_episode_config(seed=77)
    digests = []
    for run in range(2):
        archive = harness.run_episode(problem, config, meta.RandomPolicy())
        paths = harness.export_run(archive, problem, config, tmp_path / f"run{run}")
        digests.append(paths["solutions"].read_bytes())
    assert digests[0] == digests[1]
    _report(13, "determinism", "identical-seed runs give byte-identical CSVs")
