import numpy as np
import pytest

from poisonrec import mf
from poisonrec.attack import (
    AttackPlan, FakeUserModel, FakeUserProfile, ItemStats, attack_loss, choose_users, competitor_lists,
    dumps_profiles, inject, joint_rating_gradient, load_profiles, manifest, materialize_fake_user, optimize_fake_user,
    rating_gradient, remove_rotation, run_attack, wmw_grad, wmw_loss,
)
from poisonrec.ratings import RatingDataset, synth


class TestWMW:
    def test_center_and_symmetry(self):
        assert wmw_loss(0.0, 0.3) == 0.5
        x = np.linspace(-40, 40, 101)
        assert np.max(np.abs(wmw_loss(x, 0.7) + wmw_loss(-x, 0.7) - 1)) <= 1e-12

    def test_scalar_value(self):
        assert wmw_loss(0.05, 0.01) == pytest.approx(1 / (1 + np.exp(-5)), rel=1e-15)

    def test_derivative(self):
        x, b, h = np.linspace(-2, 2, 9), 0.5, 1e-6
        fd = (wmw_loss(x + h, b) - wmw_loss(x - h, b)) / (2 * h)
        np.testing.assert_allclose(wmw_grad(x, b), fd, rtol=1e-8)

    def test_no_overflow(self):
        with np.errstate(all="raise"):
            assert wmw_loss(1e6, 1e-3) == 1.0 and 0 <= wmw_loss(-1e6, 1e-3) < 1e-300

    def test_width_must_be_positive(self):
        with pytest.raises(ValueError):
            wmw_loss(1.0, 0.0)


class TestLoss:
    def test_empty_set(self):
        X, Y = np.ones((2, 1)), np.ones((3, 1))
        assert attack_loss(X, Y, [], np.zeros((0, 2), int), np.zeros(3), 0, 0.01, 1.0) == 0

    def test_saturated(self):
        X = np.ones((2, 1))
        Y = np.array([[100.0], [0.0], [0.1]])
        w = np.array([5.0, 1.0, 0.0])
        gamma = np.array([[1, 2], [1, 2]])
        assert attack_loss(X, Y, [0, 1], gamma, w, 0, 0.01, 0.01) == pytest.approx(0.06, abs=1e-12)

    def test_brute_force(self):
        ds = synth(2, 15, 12, 0.3, 2)
        model = mf.train(ds, 3, 0.1, 30, 0)
        X, Y = model.X, model.Y
        t, N, b, eta = 4, 3, 0.5, 0.01
        S = [0, 3, 7, 9]
        w = np.linspace(0, 5, ds.n_items)
        gamma = competitor_lists(X, Y, ds, S, t, N)
        expect = eta * w.sum()
        for u in S:
            rated = set(ds.user_items(u).tolist()) | {t}
            ranked = sorted((i for i in range(ds.n_items) if i not in rated), key=lambda i: (-X[u] @ Y[i], i))
            for i in ranked[:N]:
                expect += 1 / (1 + np.exp(-(X[u] @ Y[i] - X[u] @ Y[t]) / b))
        assert attack_loss(X, Y, S, gamma, w, t, eta, b) == pytest.approx(expect, rel=1e-12)

    def test_weights(self):
        X, Y = np.ones((2, 1)), np.array([[0.0], [1.0]])
        gamma = np.array([[1], [1]])
        plain = attack_loss(X, Y, [0, 1], gamma, np.zeros(2), 0, 0.0, 1.0)
        weighted = attack_loss(X, Y, [0, 1], gamma, np.zeros(2), 0, 0.0, 1.0, [0.25, 0.75])
        assert weighted == pytest.approx(plain / 2)


@pytest.fixture(scope="module")
def fitted():
    ds = synth(5, 20, 15, 0.3, 2, long_tail=False)
    d, lam = 3, 0.1
    base = mf.train(ds, d, lam, 100, 0)
    w = np.random.default_rng(2).uniform(0.5, 4.5, ds.n_items)
    fm = FakeUserModel(ds, d, lam)
    fm.fit(w, base.Y.copy(), 3000)
    return ds, fm, w


class TestJacobian:
    def test_item_jacobian_with_users_and_fake_fixed(self, fitted):
        """A_i^-1 z is the derivative of the item refit when x and z stay put."""
        ds, fm, w = fitted
        z = fm.z
        J = np.linalg.solve(fm._gram + np.outer(z, z), np.broadcast_to(z, fm.Y.shape)[..., None])[..., 0]

        def items(w_):
            return np.linalg.solve(fm._gram + np.outer(z, z), (fm._rhs0 + w_[:, None] * z)[..., None])[..., 0]

        eps = 1e-4
        for i in range(ds.n_items):
            e = np.zeros(ds.n_items)
            e[i] = eps
            fd = (items(w + e)[i] - items(w - e)[i]) / (2 * eps)
            assert np.linalg.norm(fd - J[i]) <= 1e-6 * np.linalg.norm(fd)

    def test_full_jacobian_matches_retraining(self, fitted):
        ds, fm, w = fitted
        theta0, Y0 = fm.joint_params(), fm.Y.copy()
        D = fm.item_block(fm.full_jacobian(w))
        eps = 1e-4
        for i in (0, 7, 14):
            e = np.zeros(ds.n_items)
            e[i] = eps
            fm.fit(w + e, Y0.copy(), 3000)
            hi = fm.joint_params()
            fm.fit(w - e, Y0.copy(), 3000)
            lo = fm.joint_params()
            fd = fm.item_block(remove_rotation((hi - lo) / (2 * eps), theta0, fm.d))
            assert np.linalg.norm(D[:, :, i] - fd) <= 1e-3 * np.linalg.norm(fd)
        fm.fit(w, Y0, 10)

    def test_rotation_removal(self):
        theta = np.random.default_rng(0).normal(size=12)
        G = np.array([[0.0, 1.0], [-1.0, 0.0]])
        along = (theta.reshape(-1, 2) @ G).ravel()
        assert np.linalg.norm(remove_rotation(along, theta, 2)) < 1e-12
        assert remove_rotation(theta, theta, 1) is theta

    def test_lambda_zero(self):
        ds = RatingDataset(2, 2, [0], [0], [5])
        with pytest.raises(mf.TrainingError, match="lambda"):
            FakeUserModel(ds, 2, 0.0)


class TestGradient:
    def setup_problem(self, fitted):
        ds, fm, w = fitted
        t, S = 3, np.arange(0, 20, 2)
        gamma = competitor_lists(fm.X, fm.Y, ds, S, t, 4)
        return ds, fm, w, t, S, gamma

    def test_matches_surrogate_differences(self, fitted):
        ds, fm, w, t, S, gamma = self.setup_problem(fitted)
        anchor = fm.Y.copy()

        def loss(w_):
            return attack_loss(fm.X, fm.respond(w_, anchor).Y, S, gamma, w_, t, 0.0, 1.0)

        G = rating_gradient(fm.X, fm.respond(w, anchor), S, gamma, w, t, 0.0, 1.0)
        eps = 1e-6
        fd = np.array([(loss(w + eps * e) - loss(w - eps * e)) / (2 * eps) for e in np.eye(ds.n_items)])
        np.testing.assert_allclose(G, fd, rtol=1e-6, atol=1e-8)

    def test_joint_gradient_matches_full_retraining(self, fitted):
        ds, fm, w, t, S, gamma = self.setup_problem(fitted)
        Y0 = fm.Y.copy()
        G = joint_rating_gradient(fm, w, S, gamma, t, 0.0, 1.0)
        frozen = rating_gradient(fm.X, fm.respond(w, Y0), S, gamma, w, t, 0.0, 1.0)

        def loss(w_):
            fm.fit(w_, Y0.copy(), 800)
            return attack_loss(fm.X, fm.Y, S, gamma, w_, t, 0.0, 1.0)

        eps = 1e-4
        fd = np.array([(loss(w + eps * e) - loss(w - eps * e)) / (2 * eps) for e in np.eye(ds.n_items)])
        fm.fit(w, Y0, 10)

        def cos(a, b):
            return a @ b / (np.linalg.norm(a) * np.linalg.norm(b))

        assert cos(G, fd) >= 0.999
        # freezing the normal users is a real approximation on a set this small
        assert cos(frozen, fd) < cos(G, fd)

    def test_frozen_users_direction_on_larger_set(self):
        """With the fake user a small share of the data the cheap gradient points the right way."""
        ds = synth(5, 150, 40, 0.15, 2, long_tail=False)
        base = mf.train(ds, 3, 0.1, 100, 0)
        w = np.zeros(40)
        w[3] = 5
        w[::3] += np.random.default_rng(2).uniform(0, 0.5, 14)
        fm = FakeUserModel(ds, 3, 0.1)
        fm.fit(w, base.Y.copy(), 1000)
        S = np.arange(0, 150, 2)
        gamma = competitor_lists(fm.X, fm.Y, ds, S, 3, 4)
        G = rating_gradient(fm.X, fm.respond(w, fm.Y), S, gamma, w, 3, 0.0, 1.0)
        ref = joint_rating_gradient(fm, w, S, gamma, 3, 0.0, 1.0)
        assert G @ ref / (np.linalg.norm(G) * np.linalg.norm(ref)) >= 0.9

    def test_unreachable_item_has_zero_ranking_gradient(self):
        X = np.array([[1.0, 0.0]])
        Y = np.array([[1.0, 0.0], [0.5, 0.0], [0.0, 1.0]])
        ds = RatingDataset(1, 3, [0], [0], [5])
        fm = FakeUserModel(ds, 2, 0.1)
        fm.set_users(X)
        w = np.array([0.0, 0.0, 0.0])
        resp = fm.respond(w, Y)
        G = rating_gradient(X, resp, [0], np.array([[1]]), w, 0, 0.0, 1.0, through_z=False)
        assert G[2] == 0

    def test_l1_subgradient_at_zero(self):
        X, Y = np.ones((1, 1)), np.ones((2, 1))
        ds = RatingDataset(1, 2, [], [], [])
        fm = FakeUserModel(ds, 1, 0.1)
        fm.set_users(X)
        w = np.array([0.0, 2.0])
        G = rating_gradient(X, fm.respond(w, Y), [], np.zeros((0, 1), int), w, 0, 0.3, 1.0)
        np.testing.assert_array_equal(G, [0.0, 0.3])


class TestOptimize:
    def test_trace_nonincreasing_within_epochs(self):
        ds = synth(3, 60, 30, 0.15, 3)
        plan = AttackPlan(n=0, b=1.0, d=4, delta=20, max_iter=25, refresh_every=10)
        t = int(np.argmin(ds.item_degree()))
        res = optimize_fake_user(ds, t, plan, np.arange(20))
        trace, starts = np.array(res.loss_trace), set(res.epochs)
        for k in range(1, trace.size):
            if k not in starts:
                assert trace[k] <= trace[k - 1]
        assert np.all((res.w >= 0) & (res.w <= ds.r_max)) and res.w[t] == ds.r_max

    def test_single_item_unchanged(self):
        ds = RatingDataset(3, 1, [0, 1], [0, 0], [4, 2])
        res = optimize_fake_user(ds, 0, AttackPlan(d=2, max_iter=5), np.arange(3))
        np.testing.assert_array_equal(res.w, [5.0])

    def test_deterministic(self):
        ds = synth(4, 40, 20, 0.2, 2)
        plan = AttackPlan(b=1.0, d=3, max_iter=10)
        a = optimize_fake_user(ds, 1, plan, np.arange(10))
        b = optimize_fake_user(ds, 1, plan, np.arange(10))
        assert np.array_equal(a.w, b.w) and a.loss_trace == b.loss_trace

    def test_loss_decreases_on_most_seeds(self):
        wins = 0
        for seed in range(5):
            ds = synth(seed, 100, 50, 0.1, 4)
            t = int(np.argsort(ds.item_degree(), kind="stable")[5])
            plan = AttackPlan(b=1.0, d=4, max_iter=20, seed=seed)
            res = optimize_fake_user(ds, t, plan, np.arange(0, 100, 3))
            wins += res.loss_trace[-1] < res.loss_trace[0]
        assert wins >= 4


class TestMaterialize:
    def stats(self):
        ds = RatingDataset(3, 4, [0, 1, 2, 0, 1], [1, 1, 1, 2, 3], [5, 5, 5, 1, 3])
        return ItemStats.of(ds)

    def test_top_fillers(self):
        p = materialize_fake_user(np.array([5.0, 0.9, 0.1, 0.5]), self.stats(), 0, 2, 5, 0)
        assert p.fillers == (1, 3) and p.ratings[0] == 5

    def test_zero_budget(self):
        p = materialize_fake_user(np.arange(4.0), self.stats(), 2, 0, 5, 0)
        assert p.ratings == {2: 5} and p.fillers == ()

    def test_degenerate_normal(self):
        p = materialize_fake_user(np.array([0.0, 9.0, 0.0, 0.0]), self.stats(), 0, 1, 5, 7)
        assert p.ratings[1] == 5

    def test_unrated_filler_flagged(self):
        p = materialize_fake_user(np.array([9.0, 0.0, 0.0, 0.0]), self.stats(), 3, 1, 5, 0)
        assert p.fillers == (0,) and p.flags == ("unrated-filler:0",)

    def test_ties_to_lower_id(self):
        p = materialize_fake_user(np.ones(4), self.stats(), 1, 2, 5, 0)
        assert p.fillers == (0, 2)

    def test_constraints_hold(self):
        rng = np.random.default_rng(1)
        stats = self.stats()
        for s in range(50):
            p = materialize_fake_user(rng.uniform(0, 5, 4), stats, 2, 2, 5, s)
            p.check(2, 5)

    def test_check_rejects_bad_profiles(self):
        with pytest.raises(ValueError):
            FakeUserProfile("v", 0, (1, 2), {0: 5, 1: 1, 2: 2}).check(1, 5)
        with pytest.raises(ValueError):
            FakeUserProfile("v", 0, (1,), {0: 4, 1: 1}).check(1, 5)
        with pytest.raises(ValueError):
            FakeUserProfile("v", 0, (1,), {0: 5, 1: 7}).check(1, 5)


class TestRunAttack:
    @pytest.fixture(scope="class")
    @staticmethod
    def ds():
        return synth(6, 50, 25, 0.15, 3)

    def test_single_fake_user(self, ds):
        plan = AttackPlan(variant="S-TNA-Inf", m=1, n=5, b=1.0, d=3, delta=10, max_iter=10)
        res = run_attack(ds, 2, plan)
        assert len(res.profiles) == 1 and len(res.loss_traces) == 1
        assert res.profiles[0].id == "fake0" and len(res.selected) == 10
        res.profiles[0].check(5, ds.r_max)

    def test_rand_with_everyone_equals_uniform(self, ds):
        rand = choose_users(ds, 2, AttackPlan(variant="S-TNA-Rand", delta=ds.n_users))[0]
        uni = choose_users(ds, 2, AttackPlan(variant="U-TNA"))[0]
        assert np.array_equal(rand, uni)

    def test_weighted_sums_to_one(self, ds):
        S, H, _ = choose_users(ds, 2, AttackPlan(variant="Weighted", d=3))
        assert S.size == ds.n_users and abs(H.sum() - 1) <= 1e-12

    @pytest.mark.parametrize("variant", ["Random", "Average", "PGA-lite"])
    def test_baselines(self, ds, variant):
        res = run_attack(ds, 2, AttackPlan(variant=variant, m=4, n=6))
        assert len(res.profiles) == 4 and "simplified-baseline" in res.flags
        for p in res.profiles:
            p.check(6, ds.r_max)

    def test_invalid_plan(self, ds):
        with pytest.raises(ValueError):
            run_attack(ds, 2, AttackPlan(variant="SGLD"))
        with pytest.raises(ValueError):
            run_attack(ds, 2, AttackPlan(m=0))

    def test_profiles_round_trip(self, ds, tmp_path):
        res = run_attack(ds, 2, AttackPlan(variant="Random", m=3, n=4))
        path = tmp_path / "p.txt"
        path.write_text(dumps_profiles(res.profiles, ds))
        back = load_profiles(path, ds, target=2)
        assert [p.ratings for p in back] == [p.ratings for p in res.profiles]
        bigger = inject(ds, back)
        assert bigger.n_users == ds.n_users + 3 and bigger.n_edges == ds.n_edges + sum(len(p.ratings) for p in back)
        assert '"variant": "Random"' in manifest(res, ds)
