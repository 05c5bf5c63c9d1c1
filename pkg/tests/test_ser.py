import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_step
from grfkit.errors import (
    ConvergenceError,
    DegenerateFitWarning,
    DimensionMismatchError,
    EmptyDesignError,
    IllConditionedEmbeddingError,
    InvalidRankError,
    NonFiniteValueError,
)
from grfkit.ser import (
    DesignMatrices,
    SerModel,
    TruncatedSvd,
    assemble_matrices,
    fit_elastic_net,
    l1_kill_threshold,
    ridge_closed_form,
    ser_fit,
    ser_fit_grid,
    ser_predict,
    split_grf_row,
    truncated_svd,
)
from grfkit.signal import SensorSet, grf_row, select_sensor_channels


def steps_for(rng, measurement, n, athlete="a1"):
    out = []
    for k in range(n):
        s = random_step(rng, "left" if k % 2 else "right", 700.0, f"{measurement}:{k:03d}")
        out.append(s.__class__(**{**s.__dict__, "measurement_id": measurement, "athlete_id": athlete}))
    return out


def design(A_imu, A_grf, S=1):
    n = A_imu.shape[0]
    return DesignMatrices(A_imu, A_grf, S, SensorSet.ALL, tuple(("m", i, i + 1) for i in range(n)),
                          tuple((f"m:{i}",) for i in range(n)))


# -- assembly ----------------------------------------------------------------


class TestAssemble:
    def test_sixty_steps_ten_per_row(self, rng):
        d = assemble_matrices(steps_for(rng, "m1", 60), 10, SensorSet.ALL)
        assert d.A_imu.shape == (6, 10 * 800)
        assert d.A_grf.shape == (6, 10 * 600)

    def test_remainder_dropped(self, rng):
        d = assemble_matrices(steps_for(rng, "m1", 7), 3, SensorSet.ALL)
        assert d.n_rows == 2
        assert d.provenance == (("m1", 0, 3), ("m1", 3, 6))
        assert d.step_ids[1] == ("m1:003", "m1:004", "m1:005")

    def test_single_step_dimensions(self, rng):
        d = assemble_matrices(steps_for(rng, "m1", 4), 1, "all")
        assert d.A_imu.shape == (4, 800) and d.A_grf.shape == (4, 600)

    def test_layout(self, rng):
        steps = steps_for(rng, "m1", 4)
        d = assemble_matrices(steps, 2, SensorSet.SACRUM)
        np.testing.assert_array_equal(d.A_imu[1, : d.A_imu.shape[1] // 2], select_sensor_channels(steps[2], SensorSet.SACRUM))
        np.testing.assert_array_equal(d.A_grf[1], np.concatenate([grf_row(steps[2]), grf_row(steps[3])]))
        parts = split_grf_row(d.A_grf[1], 2)
        np.testing.assert_array_equal(parts[1][:, 2], steps[3].column("grf_z"))
        np.testing.assert_array_equal(parts[0][:, 0], steps[2].column("grf_x"))

    def test_no_straddling(self, rng):
        steps = steps_for(rng, "m1", 5) + steps_for(rng, "m2", 5)
        d = assemble_matrices(steps, 3, SensorSet.ACC)
        assert [p[0] for p in d.provenance] == ["m1", "m2"]

    def test_short_measurements_skipped(self, rng):
        steps = steps_for(rng, "m1", 2) + steps_for(rng, "m2", 4)
        assert assemble_matrices(steps, 3, SensorSet.ACC).n_rows == 1
        with pytest.raises(EmptyDesignError):
            assemble_matrices(steps_for(rng, "m1", 2), 3, SensorSet.ACC)


# -- truncated SVD -----------------------------------------------------------


class TestTruncatedSvd:
    def test_identity(self):
        t = truncated_svd(np.eye(3), rank=3)
        np.testing.assert_allclose(t.s, 1.0)
        assert t.energy_fraction == pytest.approx(1.0)

    def test_rank_one(self, rng):
        a, b = rng.normal(size=5), rng.normal(size=4)
        A = np.outer(a, b)
        t = truncated_svd(A, rank=1)
        np.testing.assert_allclose(t.reconstruct(), A, atol=1e-12)
        assert t.energy_fraction == pytest.approx(1.0)

    @pytest.mark.parametrize("shape", [(10, 8), (40, 30), (8, 12)])
    def test_eckart_young(self, rng, shape):
        A = rng.normal(size=shape)
        t = truncated_svd(A, rank=6)
        # independent LAPACK driver as oracle
        s_ref = scipy.linalg.svd(A, compute_uv=False, lapack_driver="gesvd")
        err = np.linalg.norm(A - t.reconstruct())
        assert err == pytest.approx(np.sqrt(np.sum(s_ref[6:] ** 2)), abs=1e-9)
        np.testing.assert_allclose(t.s, s_ref[:6], atol=1e-10)

    def test_structure(self, rng):
        t = truncated_svd(rng.normal(size=(30, 20)), rank=7)
        np.testing.assert_allclose(t.V.T @ t.V, np.eye(7), atol=1e-8)
        np.testing.assert_allclose(t.U.T @ t.U, np.eye(7), atol=1e-8)
        assert np.all(np.diff(t.s) <= 0) and np.all(t.s > 0)
        pivots = t.V[np.argmax(np.abs(t.V), axis=0), np.arange(7)]
        assert np.all(pivots > 0)

    def test_sign_convention_deterministic(self, rng):
        A = rng.normal(size=(12, 9))
        t1 = truncated_svd(A, rank=4)
        t2 = truncated_svd(A[::-1].copy(), rank=4)
        np.testing.assert_allclose(t1.V, t2.V, atol=1e-10)

    def test_energy_minimal(self, rng):
        for _ in range(20):
            A = rng.normal(size=(15, 10)) * rng.uniform(0.1, 3, size=10)
            t = truncated_svd(A, energy=0.95)
            s = np.linalg.svd(A, compute_uv=False)
            share = lambda r: np.sum(s[:r] ** 2) / np.sum(s**2)
            assert share(t.rank) >= 0.95 - 1e-12
            assert t.rank == 1 or share(t.rank - 1) < 0.95
            assert 0 < t.energy_fraction <= 1

    def test_energy_fraction_formula(self, rng):
        A = rng.normal(size=(9, 6))
        t = truncated_svd(A, rank=2)
        assert t.energy_fraction == pytest.approx(np.sum(t.s**2) / np.linalg.norm(A) ** 2, rel=1e-12)

    def test_invalid_rank(self, rng):
        with pytest.raises(InvalidRankError):
            truncated_svd(rng.normal(size=(4, 3)), rank=4)
        with pytest.raises(InvalidRankError):
            truncated_svd(rng.normal(size=(4, 3)), rank=0)

    def test_non_finite(self):
        with pytest.raises(NonFiniteValueError):
            truncated_svd(np.array([[1.0, np.nan]]), rank=1)

    def test_embedding_round_trip(self, rng):
        A = rng.normal(size=(20, 12))
        t = truncated_svd(A, rank=5)
        np.testing.assert_allclose(t.embed(A), t.U, atol=1e-8)


# -- elastic net -------------------------------------------------------------


def ridge_oracle(X, y, lam2):
    Z = np.hstack([X, np.ones((X.shape[0], 1))])
    return np.linalg.solve(Z.T @ Z + lam2 * np.eye(Z.shape[1]), Z.T @ y)


class TestElasticNet:
    def test_two_point_interpolation(self):
        beta, alpha = fit_elastic_net(np.array([[0.0], [1.0]]), np.array([1.0, 3.0]), 0, 0)
        assert beta[0] == pytest.approx(2.0, abs=1e-8)
        assert alpha == pytest.approx(1.0, abs=1e-8)

    def test_ridge_oracle(self, rng):
        for _ in range(100):
            n, r = rng.integers(8, 30), rng.integers(1, 7)
            X, y = rng.normal(size=(n, r)), rng.normal(size=n) + rng.normal()
            lam2 = float(rng.choice([0.0, 1e-3, 0.5, 3.0]))
            beta, alpha = fit_elastic_net(X, y, 0.0, lam2)
            ref = ridge_oracle(X, y, lam2)
            np.testing.assert_allclose(np.append(beta, alpha), ref, atol=1e-8)

    def test_ridge_example(self, rng):
        X, y = rng.normal(size=(20, 3)), rng.normal(size=20)
        beta, alpha = fit_elastic_net(X, y, 0.0, 0.5)
        np.testing.assert_allclose(np.append(beta, alpha), ridge_oracle(X, y, 0.5), atol=1e-8)

    def test_kill_threshold(self, rng):
        for _ in range(20):
            X, y = rng.normal(size=(15, 4)), rng.normal(size=15) + 2
            lam = l1_kill_threshold(X, y)
            Z = np.hstack([X, np.ones((15, 1))])
            assert lam == pytest.approx(2 * np.max(np.abs(Z.T @ y)))
            assert lam <= 2 * np.max(np.abs(X.T @ y)) + 2 * abs(y.sum()) + 1e-12
            beta, alpha = fit_elastic_net(X, y, lam * 1.0001, 0.3)
            assert np.all(beta == 0) and alpha == 0
            beta, alpha = fit_elastic_net(X, y, lam * 0.9, 0.3)
            assert np.any(np.append(beta, alpha) != 0)

    def test_kkt_conditions(self, rng):
        # subgradient optimality of the literal loss, checked independently
        for _ in range(30):
            X, y = rng.normal(size=(25, 5)), rng.normal(size=25)
            lam1, lam2 = rng.uniform(0.1, 10), rng.uniform(0, 2)
            beta, alpha = fit_elastic_net(X, y, lam1, lam2)
            z = np.append(beta, alpha)
            Z = np.hstack([X, np.ones((25, 1))])
            grad = -2 * Z.T @ (y - Z @ z) + 2 * lam2 * z
            active = z != 0
            np.testing.assert_allclose(grad[active], -lam1 * np.sign(z[active]), atol=1e-7)
            assert np.all(np.abs(grad[~active]) <= lam1 + 1e-7)

    def test_unpenalized_intercept(self, rng):
        X, y = rng.normal(size=(30, 3)), rng.normal(size=30) + 5
        lam = l1_kill_threshold(X, y, penalize_intercept=False)
        beta, alpha = fit_elastic_net(X, y, lam * 1.0001, 0.0, penalize_intercept=False)
        assert np.all(beta == 0)
        assert alpha == pytest.approx(y.mean(), abs=1e-9)

    def test_matrix_targets_match_columns(self, rng):
        X, Y = rng.normal(size=(20, 4)), rng.normal(size=(20, 3))
        l1 = np.array([0.0, 0.5, 2.0])
        beta, alpha = fit_elastic_net(X, Y, l1, 0.1)
        for j in range(3):
            b, a = fit_elastic_net(X, Y[:, j], l1[j], 0.1)
            np.testing.assert_allclose(beta[:, j], b, atol=1e-9)
            assert alpha[j] == pytest.approx(a, abs=1e-9)

    def test_warm_start_same_answer(self, rng):
        X, y = rng.normal(size=(20, 4)), rng.normal(size=20)
        cold = fit_elastic_net(X, y, 1.0, 0.2)
        warm = fit_elastic_net(X, y, 1.0, 0.2, init=ridge_closed_form(X, y, 0.2))
        np.testing.assert_allclose(cold[0], warm[0], atol=1e-8)

    def test_convergence_error_keeps_iterate(self, rng):
        X = rng.normal(size=(20, 4))
        X[:, 1] = X[:, 0] + 1e-3 * rng.normal(size=20)
        with pytest.raises(ConvergenceError) as info:
            fit_elastic_net(X, rng.normal(size=20), 0, 0, max_sweeps=2)
        assert info.value.coef.shape == (4,) and info.value.sweeps == 2

    def test_non_finite(self):
        with pytest.raises(NonFiniteValueError):
            fit_elastic_net(np.array([[np.inf]]), np.array([1.0]))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31), st.floats(0, 5), st.floats(0, 5))
    def test_objective_not_above_ridge(self, seed, lam1, lam2):
        r = np.random.default_rng(seed)
        X, y = r.normal(size=(12, 3)), r.normal(size=12)
        Z = np.hstack([X, np.ones((12, 1))])
        loss = lambda z: np.sum((y - Z @ z) ** 2) + lam2 * z @ z + lam1 * np.abs(z).sum()
        beta, alpha = fit_elastic_net(X, y, lam1, lam2)
        z = np.append(beta, alpha)
        for other in (np.zeros(4), ridge_oracle(X, y, lam2)):
            assert loss(z) <= loss(other) + 1e-9


# -- SER ---------------------------------------------------------------------


def low_rank(rng, n, m, r):
    return rng.normal(size=(n, r)) @ rng.normal(size=(r, m))


class TestSer:
    def test_exact_recovery(self, rng):
        A = low_rank(rng, 60, 40, 6)
        M = rng.normal(size=(40, 30))
        train = design(A[:45], A[:45] @ M)
        model = ser_fit(train, rank=6)
        pred = model.predict(A[45:])
        truth = A[45:] @ M
        assert np.linalg.norm(pred - truth) / np.linalg.norm(truth) <= 1e-6

    def test_identity_task(self, rng):
        A = rng.normal(size=(30, 20))
        model = ser_fit(design(A, A), rank=8)
        approx = truncated_svd(A, rank=8).reconstruct()
        for i in range(30):
            row = ser_predict(model, A[i])
            assert np.linalg.norm(row - approx[i]) <= 1e-6 * np.linalg.norm(approx[i])

    def test_zero_row_gives_intercept(self, rng):
        A, B = rng.normal(size=(20, 10)), rng.normal(size=(20, 8))
        model = ser_fit(design(A, B), rank=4, lam2=0.1)
        expected = (model.intercept * model.grf_svd.s) @ model.grf_svd.V.T
        np.testing.assert_allclose(model.predict(np.zeros(10)), expected, atol=1e-14)

    def test_affine_not_linear(self, rng):
        A, B = rng.normal(size=(20, 10)) + 1, rng.normal(size=(20, 8)) + 3
        model = ser_fit(design(A, B), rank=4)
        assert np.any(np.abs(model.intercept) > 1e-6)
        x = A[0]
        assert not np.allclose(model.predict(2 * x), 2 * model.predict(x))

    def test_training_residual_zero(self, rng):
        A = low_rank(rng, 20, 12, 5)
        B = A @ rng.normal(size=(12, 9))
        model = ser_fit(design(A, B), rank=5)
        np.testing.assert_allclose(model.predict(A), B, atol=1e-8 * np.abs(B).max())

    def test_grid_matches_single(self, rng):
        A, B = rng.normal(size=(25, 10)), rng.normal(size=(25, 8))
        d = design(A, B)
        pairs = [(0.0, 0.0), (1e-3, 0.1), (0.5, 1.0)]
        for m, (l1, l2) in zip(ser_fit_grid(d, pairs, 4, warm_start=True), pairs):
            ref = ser_fit(d, 4, l1, l2)
            np.testing.assert_allclose(m.coef, ref.coef, atol=1e-8)
            np.testing.assert_allclose(m.intercept, ref.intercept, atol=1e-8)

    def test_single_row_warns(self, rng):
        with pytest.warns(DegenerateFitWarning):
            ser_fit(design(rng.normal(size=(1, 5)), rng.normal(size=(1, 4))), rank=1)

    def test_dimension_mismatch(self, rng):
        model = ser_fit(design(rng.normal(size=(10, 5)), rng.normal(size=(10, 4))), rank=2)
        with pytest.raises(DimensionMismatchError):
            model.predict(np.zeros(6))

    def test_ill_conditioned(self, rng):
        model = ser_fit(design(rng.normal(size=(10, 8)), rng.normal(size=(10, 4))), rank=3)
        t = model.imu_svd
        bad = TruncatedSvd(t.U, np.array([t.s[0], t.s[1], 1e-14]), t.V, t.energy_fraction, t.total_energy)
        model = SerModel(bad, model.grf_svd, model.coef, model.intercept, 1, 0.0, 0.0)
        with pytest.raises(IllConditionedEmbeddingError):
            model.predict(np.ones(8))

    def test_json_round_trip(self, rng):
        A, B = rng.normal(size=(15, 10)), rng.normal(size=(15, 6))
        model = ser_fit(design(A, B), rank=3, lam1=0.01, lam2=0.1)
        back = SerModel.from_json(model.to_json())
        np.testing.assert_allclose(back.predict(A), model.predict(A), atol=1e-12, rtol=0)
        assert back.sensors == SensorSet.ALL and back.lam1 == 0.01
