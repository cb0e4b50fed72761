import numpy as np
import pytest

from diagnostics import QUANTILES, diagnostics, sample_acf_pacf
from errors import ContractError
from gibbs_sampler import PosteriorDraws


### 보조
def _draws(lam, sigma2=None, accept_count=0, label="test") -> PosteriorDraws:
    lam = np.asarray(lam, dtype=float)
    m = lam.shape[0]
    return PosteriorDraws(
        lam=lam,
        sigma2=np.full(m, 0.05) if sigma2 is None else np.asarray(sigma2, dtype=float),
        a1=np.linspace(2.0, 3.0, m),
        a2=np.full(m, 9.8),
        accepted=np.zeros(m, bool),
        iteration_index=np.arange(1, m + 1),
        accept_count=accept_count,
        iterations=max(m, accept_count),
        label=label,
    )


def test_constant_chain_is_degenerate():
    acf_vals, pacf_vals, degenerate = sample_acf_pacf(np.full(50, 3.0), 5)
    assert degenerate
    assert acf_vals.tolist() == [1.0] * 6
    assert pacf_vals.tolist() == [1.0, 0.0, 0.0, 0.0, 0.0]


def test_white_noise_stays_inside_band():
    rng = np.random.default_rng(0)
    N = 100000
    acf_vals, pacf_vals, degenerate = sample_acf_pacf(rng.standard_normal(N), 40)
    assert not degenerate
    assert acf_vals[0] == 1.0
    band = 3.0 / np.sqrt(N)
    assert np.sum(np.abs(acf_vals[1:]) > band) <= 1
    assert np.sum(np.abs(pacf_vals) > band) <= 1


def test_ar1_pacf_cuts_off_after_lag_one():
    rng = np.random.default_rng(1)
    N = 50000
    x = np.empty(N)
    x[0] = 0.0
    e = rng.standard_normal(N)
    for k in range(1, N):
        x[k] = 0.9 * x[k - 1] + e[k]
    acf_vals, pacf_vals, _ = sample_acf_pacf(x, 10)
    assert pacf_vals[0] == pytest.approx(0.9, abs=0.02)
    assert np.all(np.abs(pacf_vals[1:]) < 0.03)
    assert acf_vals[2] == pytest.approx(0.81, abs=0.05)


def test_diagnostics_collects_quantiles_and_acceptance():
    lam = np.arange(1.0, 201.0)
    diag = diagnostics(_draws(lam, accept_count=50), max_lag=10)
    assert diag.acceptance_rate == pytest.approx(0.25)
    assert diag.max_lag == 10
    q = diag.parameters["lambda"].quantiles
    assert list(q) == list(QUANTILES)
    assert q[0.5] == pytest.approx(100.5)
    assert diag.parameters["a2"].degenerate
    assert not diag.parameters["lambda"].degenerate


def test_frames_have_expected_shape():
    diag = diagnostics(_draws(np.random.default_rng(2).gamma(2.0, size=100)), max_lag=5)
    acf = diag.acf_frame()
    assert len(acf) == 4 * 6
    assert acf.loc[acf["lag"] == 0, "pacf"].eq(1.0).all()
    assert list(diag.trace_frame().columns) == ["lambda", "sigma2", "a1", "a2"]
    summary = diag.summary_frame()
    assert list(summary.columns) == ["parameter", "q2.5", "q50", "q97.5", "degenerate"]


def test_short_chain_truncates_lag():
    with pytest.warns(RuntimeWarning):
        diag = diagnostics(_draws(np.arange(1.0, 11.0)), max_lag=40)
    assert diag.max_lag == 4
    assert len(diag.parameters["lambda"].acf) == 5


def test_empty_draws_raise():
    with pytest.raises(ContractError):
        diagnostics(_draws(np.empty(0)))
