import math

import numpy as np
import pytest
from scipy import stats

import pgminmax.outer as outer
from pgminmax.errors import ConfigurationError
from pgminmax.geometry import PrimalConstraint
from pgminmax.outer import (
    D1,
    D2,
    SVRG_MU_POSITIVE,
    SVRG_MU_ZERO,
    PgSchedule,
    default_gamma,
    pg_smd,
    pg_svrg,
    resolve_gamma,
    sample_output_index,
    theorem_T,
)
from pgminmax.problems import DroTruncatedLogistic, ProblemConstants

INF = math.inf


def consts(**kw):
    base = dict(rho=0.5, mu=0.0, M_x=4.0, M_y=6.0, M_c=2.0, L_x=3.0, L_y=2.0, D_x=2.0, D_y=3.0,
                Q_g=0.0, Q_r=1.0)
    base.update(kw)
    return ProblemConstants(**base)


def small_dro(seed=0, n=40, d=4, theta=1.0):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n, d))
    A /= np.linalg.norm(A, axis=1, keepdims=True)
    b = np.sign(A @ rng.normal(size=d) + 0.3 * rng.normal(size=n))
    b[b == 0] = 1.0
    return DroTruncatedLogistic(A, b, alpha=2.0, theta=theta, constraint=PrimalConstraint.ball(10.0))


# -- golden schedule tables (t = 0..10) -------------------------------------------
# Constants are chosen so each entry is a short exact fraction or a frozen integer.

def test_d1_golden_table():
    s = PgSchedule(D1, 12, 1.0, consts())
    for t in range(11):
        row = s.at(t)
        assert row["j"] == (t + 2) ** 2
        assert row["eta_x"] == 2.0 / (4.0 * (t + 2))  # D_x / (M_x sqrt(j))
        assert row["eta_y"] == 3.0 / (6.0 * (t + 2))
    assert [s.at(t)["j"] for t in range(11)] == [4, 9, 16, 25, 36, 49, 64, 81, 100, 121, 144]
    assert [s.at(t)["eta_x"] for t in range(4)] == [0.25, 1 / 6, 0.125, 0.1]


def test_d2_golden_table():
    s = PgSchedule(D2, 12, 1.0, consts(mu=4.0))
    for t in range(11):
        row = s.at(t)
        assert row["j"] == t + 32
        assert row["eta_x"] == 120.0 / (t + 2)  # 60 / (rho (j - 30))
        assert row["eta_y"] == 2.0 / (t + 32)  # 8 M_c^2 gamma / (mu^2 j)
    assert s.at(0)["eta_x"] == 60.0 and s.at(0)["j"] == 32


K_MU_POS = [45, 51, 54, 56, 58, 59, 61, 62, 63, 64, 64]
K_MU_ZERO = [45, 53, 58, 61, 64, 67, 69, 71, 72, 74, 75]
J_MU_ZERO = [7789, 17521, 31145, 48663, 70072, 95375, 124570, 157659, 194639, 235513, 280279]
LAMBDA_MU_ZERO = [1872.0, 4212.0, 7488.0, 11700.0, 16848.0, 22932.0, 29952.0, 37908.0, 46800.0,
                  56628.0, 67392.0]


def test_svrg_golden_table_mu_positive():
    s = PgSchedule(SVRG_MU_POSITIVE, 12, 1.0, consts(mu=0.5))
    for t in range(11):
        row = s.at(t)
        assert row["lambda"] == INF
        assert row["mu_y"] == 0.5
        assert row["Lambda"] == 1872.0  # 52 * 3^2 / 0.5^2
        assert row["J"] == 7789
        assert row["k"] == K_MU_POS[t]


def test_svrg_golden_table_mu_zero():
    s = PgSchedule(SVRG_MU_ZERO, 12, 1.0, consts())
    for t in range(11):
        row = s.at(t)
        assert row["lambda"] == t + 2
        assert row["mu_y"] == 1.0 / (t + 2)
        assert row["Lambda"] == pytest.approx(LAMBDA_MU_ZERO[t], rel=1e-15)
        assert row["J"] == J_MU_ZERO[t]
        assert row["k"] == K_MU_ZERO[t]
    first = s.at(0)
    assert first["lambda"] == 2 and first["mu_y"] == 0.5


def test_k_nondecreasing_and_at_least_two():
    for case, mu in ((SVRG_MU_POSITIVE, 0.5), (SVRG_MU_ZERO, 0.0)):
        for C_k in (4.0, 4.0 / 3.0, 1e-3):
            s = PgSchedule(case, 60, 1.0, consts(mu=mu), C_k=C_k)
            ks = [r["k"] for r in s.table()]
            assert all(k >= 2 for k in ks)
            assert all(b >= a for a, b in zip(ks, ks[1:]))


def test_schedule_scale_and_overrides():
    s = PgSchedule(D1, 5, 1.0, consts(), scale={"eta_x": 2.0})
    assert s.at(0)["eta_x"] == 0.5 and s.at(0)["eta_y"] == 0.25
    o = PgSchedule(SVRG_MU_POSITIVE, 5, 1.0, consts(mu=0.5), svrg_overrides={"J": 9})
    assert o.at(3)["J"] == 9
    assert len(PgSchedule(D1, 1, 1.0, consts()).table()) == 0
    with pytest.raises(ConfigurationError):
        PgSchedule(D1, 5, 1.0, consts(), scale={"eta_z": 1.0})


def test_schedule_missing_constants():
    with pytest.raises(ConfigurationError, match="M_x"):
        PgSchedule(D1, 5, 1.0, consts(M_x=INF))
    with pytest.raises(ConfigurationError, match="mu"):
        PgSchedule(D2, 5, 1.0, consts(mu=0.0))
    with pytest.raises(ConfigurationError, match="L_x"):
        PgSchedule(SVRG_MU_ZERO, 5, 1.0, consts(L_x=INF))
    with pytest.raises(ConfigurationError):
        PgSchedule("D3", 5, 1.0, consts())


def test_gamma_defaults_and_range():
    assert default_gamma(0.5) == 1.0
    c = consts()
    assert resolve_gamma(c) == 1.0
    assert resolve_gamma(c, 1.5) == 1.5
    for bad in (0.0, 2.0, 3.0):
        with pytest.raises(ConfigurationError):
            resolve_gamma(c, bad)
    with pytest.raises(ConfigurationError):
        default_gamma(0.0)


# -- output index ------------------------------------------------------------------

def test_output_index_single_iteration():
    assert sample_output_index(1, np.random.default_rng(5)) == 0
    with pytest.raises(ConfigurationError):
        sample_output_index(0, np.random.default_rng(0))


def test_output_index_uniform_chi_square():
    rng = np.random.default_rng(2024)
    draws = [sample_output_index(7, rng) for _ in range(100_000)]
    counts = np.bincount(draws, minlength=7)
    assert stats.chisquare(counts).pvalue > 0.01


def test_output_index_deterministic():
    a = [sample_output_index(9, np.random.default_rng(3)) for _ in range(3)]
    assert len(set(a)) == 1


# -- iteration-count advice --------------------------------------------------------

def test_theorem_T_d1_transcription():
    c = consts(Q_g=0.25)
    rho, gap, eps = 0.5, 3.0, 0.1
    S = gap + 8 * rho * 2.0 ** 2 + 16 * 0.25 + 16 * 1.0
    a = 336 * rho * (4.0 * 2.0 + 6.0 * 3.0) / eps ** 2
    expected = math.ceil(max(12 * rho * S / eps ** 2, a * math.log(a)))
    assert theorem_T(c, eps, D1, psi0=gap) == expected


def test_theorem_T_d1_by_substitution():
    # rho = 1, every constant 1 except Q's = 0, gap 1, eps 1:
    # first = 12 (1 + 8) = 108, second = 672 log 672
    c = ProblemConstants(1.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0)
    assert theorem_T(c, 1.0, D1, psi0=1.0) == math.ceil(672 * math.log(672))


def test_theorem_T_scaling():
    for mode, c in ((D1, consts()), (D2, consts(mu=4.0)), ("svrg", consts()), ("svrg", consts(mu=0.5))):
        t1 = theorem_T(c, 0.1, mode, psi0=2.0)
        t2 = theorem_T(c, 0.05, mode, psi0=2.0)
        # t1 is a ceiling, so the unrounded value exceeds t1 - 1
        assert t2 >= 4 * (t1 - 1)


def test_theorem_T_svrg_mu_positive_formula():
    c = consts(mu=0.5)
    assert theorem_T(c, 0.5, "svrg", psi0=1.0) == math.ceil(6 * 0.5 * (1 + math.pi ** 2 / 6) / 0.25)


def test_theorem_T_errors():
    with pytest.raises(ConfigurationError, match="psi0"):
        theorem_T(consts(), 0.1, D1)
    with pytest.raises(ConfigurationError, match="D_x"):
        theorem_T(consts(D_x=INF), 0.1, D1, psi0=1.0)
    with pytest.raises(ConfigurationError):
        theorem_T(consts(), 0.0, D1, psi0=1.0)
    with pytest.raises(ConfigurationError):
        theorem_T(consts(), 0.1, "nope", psi0=1.0)


def test_theorem_T_uses_instance_psi():
    P = small_dro()
    expected = theorem_T(P.constants, 0.5, D2, psi0=P.psi(np.zeros(P.p)))
    assert theorem_T(P, 0.5, D2) == expected


# -- outer loops on a small instance ---------------------------------------------

def test_pg_smd_single_iteration_returns_start():
    P = small_dro()
    x0 = np.full(P.p, 0.1)
    tr = pg_smd(P, x0, 1, D2, np.random.default_rng(0))
    assert tr.tau == 0 and len(tr.rows) == 1
    np.testing.assert_array_equal(tr.x_out, x0)
    assert tr.counter.equivalents == 0


def test_pg_smd_d2_counter_and_rows():
    P = small_dro()
    T, batch = 6, 4
    tr = pg_smd(P, np.zeros(P.p), T, D2, np.random.default_rng(1), batch_size=batch)
    expected = sum(P.n + (t + 32 - 1) * batch for t in range(T - 1))
    assert tr.counter.equivalents == expected
    assert [r.t for r in tr.rows] == list(range(T))
    passes = [r.data_passes for r in tr.rows]
    assert passes[0] == 0 and all(b > a for a, b in zip(passes, passes[1:]))
    assert 0 <= tr.tau < T
    np.testing.assert_array_equal(tr.x_out, tr.iterates[tr.tau])


def test_pg_smd_d1_counter():
    P = small_dro(theta=0.0)
    T = 4
    tr = pg_smd(P, np.zeros(P.p), T, D1, np.random.default_rng(1))
    assert tr.counter.equivalents == sum((t + 2) ** 2 - 1 for t in range(T - 1))
    assert tr.solver == "pg-smd-d1"


def test_pg_svrg_counter_with_overrides():
    P = small_dro()
    T, J = 4, 7
    tr = pg_svrg(P, np.zeros(P.p), T, np.random.default_rng(2), C_k=0.02,
                 overrides={"J": J, "eta_x": 0.5, "eta_y": 0.02})
    ks = [tr.schedule.at(t)["k"] for t in range(T - 1)]
    assert ks == [2, 2, 2]
    assert tr.counter.equivalents == sum((k - 1) * (P.n + J - 1) for k in ks)


def test_pg_smd_d2_dual_anchor_is_exact_argmax(monkeypatch):
    P = small_dro(theta=0.7)
    seen = []
    real = outer.inner_max_closed_form

    def spy(c, theta):
        val, y = real(c, theta)
        seen.append((np.asarray(c).copy(), theta, y))
        return val, y

    monkeypatch.setattr(outer, "inner_max_closed_form", spy)
    pg_smd(P, np.zeros(P.p), 5, D2, np.random.default_rng(0))
    assert len(seen) == 4
    for c, theta, y in seen:
        # stationarity of y^T c - theta KL(y, 1/q): c_i - theta log(q y_i) is constant
        g = c - theta * np.log(P.q * y)
        assert np.ptp(g) <= 1e-10
        assert abs(y.sum() - 1) <= 1e-12


def test_pg_smd_running_min_psi_decreases():
    P = small_dro(seed=3)
    x0 = np.full(P.p, 2.0)
    tr = pg_smd(P, x0, 25, D2, np.random.default_rng(0), batch_size=8)
    psi = np.array([P.psi(x) for x in tr.iterates])
    run_min = np.minimum.accumulate(psi)
    assert np.all(np.diff(run_min) <= 0)
    assert run_min[-1] < psi[0]


def test_pg_svrg_running_min_psi_decreases():
    P = small_dro(seed=4)
    tr = pg_svrg(P, np.full(P.p, 2.0), 10, np.random.default_rng(0), C_k=0.02,
                 overrides={"J": 40, "eta_x": 0.5, "eta_y": 0.02})
    psi = np.array([P.psi(x) for x in tr.iterates])
    assert np.minimum.accumulate(psi)[-1] < psi[0]


def test_hook_cannot_perturb_trajectory():
    P = small_dro()
    plain = pg_smd(P, np.zeros(P.p), 6, D2, np.random.default_rng(9))
    hooked = pg_smd(P, np.zeros(P.p), 6, D2, np.random.default_rng(9), hook=lambda t, x, c: {"psi": P.psi(x)})
    for a, b in zip(plain.iterates, hooked.iterates):
        np.testing.assert_array_equal(a, b)
    assert plain.tau == hooked.tau
    assert hooked.rows[0].psi == pytest.approx(P.psi(np.zeros(P.p)))


def test_runs_are_deterministic():
    P = small_dro()
    a = pg_svrg(P, np.zeros(P.p), 4, np.random.default_rng(11), C_k=0.02, overrides={"J": 10})
    b = pg_svrg(P, np.zeros(P.p), 4, np.random.default_rng(11), C_k=0.02, overrides={"J": 10})
    np.testing.assert_array_equal(a.x_out, b.x_out)
    assert a.tau == b.tau


def test_outer_argument_errors():
    P = small_dro()
    rng = np.random.default_rng(0)
    with pytest.raises(ConfigurationError):
        pg_smd(P, np.zeros(P.p), 0, D2, rng)
    with pytest.raises(ConfigurationError):
        pg_smd(P, np.zeros(P.p), 3, "D9", rng)
    with pytest.raises(ConfigurationError):
        pg_smd(small_dro(theta=0.0), np.zeros(P.p), 3, D2, rng)
    with pytest.raises(ConfigurationError):
        pg_svrg(P, np.zeros(P.p), 0, rng)
    with pytest.raises(ConfigurationError):
        pg_smd(P, np.zeros(P.p), 3, D2, rng, gamma=10.0)
