import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mftune.bayesopt import (
    DesignGrid,
    Formulation,
    ModelConfig,
    UcbConfig,
    beta_schedule,
    regret_trace,
    run_formulation,
    ucb_select,
)
from mftune.errors import InconsistencyError, InvalidInputError
from mftune.gp import Dataset
from mftune.kernels import KernelSpec


def test_beta_schedule_value():
    assert beta_schedule(1, 1331, 0.1) == pytest.approx(19.988, abs=5e-4)


def test_beta_schedule_single_point_domain():
    # a unit argument would need delta = pi^2 / 6 > 1, which is rejected,
    # so check the closed form at the smallest domain instead
    assert beta_schedule(1, 1, 0.5) == pytest.approx(2 * math.log(math.pi**2 / 3))
    with pytest.raises(InvalidInputError):
        beta_schedule(1, 1, math.pi**2 / 6)


@given(st.integers(1, 500), st.integers(1, 5000), st.floats(1e-3, 0.999))
def test_beta_schedule_increasing(t, n, delta):
    assert beta_schedule(t + 1, n, delta) > beta_schedule(t, n, delta)


@pytest.mark.parametrize("delta", [0.0, 1.0, -0.1, 1.5])
def test_beta_schedule_rejects_delta(delta):
    with pytest.raises(InvalidInputError):
        beta_schedule(1, 10, delta)


def test_ucb_select_examples():
    assert ucb_select([0.0, 0.5], [1.0, 0.1], 1.0) == 0
    assert ucb_select([0.1, 0.7, 0.7], [0.0, 0.0, 0.0], 4.0) == 1
    with pytest.raises(InvalidInputError):
        ucb_select([], [], 1.0)


@given(arrays(float, 8, elements=st.floats(-10, 10)), arrays(float, 8, elements=st.floats(0, 3)),
       st.floats(-100, 100), st.floats(0, 30))
def test_ucb_select_translation_invariant(mu, sd, c, beta):
    assert ucb_select(mu + c, sd, beta) == ucb_select(mu, sd, beta) or np.isclose(
        np.sort(mu + math.sqrt(beta) * sd)[-1], np.sort(mu + math.sqrt(beta) * sd)[-2]
    )


def test_regret_trace_examples():
    r, R, rb = regret_trace([3.0, 3.0, 5.0], 5.0)
    assert r.tolist() == [2, 2, 0] and R[-1] == 4 and rb[-1] == 0
    r, R, _ = regret_trace([1.0, 1.0], 1.0)
    assert r.tolist() == [0, 0] and R[-1] == 0
    with pytest.raises(InconsistencyError):
        regret_trace([2.0], 1.0)


@given(arrays(float, st.integers(1, 30), elements=st.floats(-5, 0)))
def test_regret_trace_invariants(f):
    r, R, rb = regret_trace(f, 0.0)
    assert np.all(r >= 0)
    assert np.all(np.diff(R) >= 0)
    assert np.all(np.diff(rb) <= 0)
    assert np.all(rb <= r)
    assert R[-1] >= rb[-1]


def test_design_grid_default():
    g = DesignGrid.standard()
    P = g.points
    assert g.size == 1331 and P.shape == (1331, 3)
    np.testing.assert_allclose(P.min(0), [0.25, 0.85, 0.02])
    np.testing.assert_allclose(P.max(0), [0.45, 0.95, 0.22])
    # last coordinate varies fastest
    assert P[0, 2] != P[1, 2] and P[0, 0] == P[1, 0]
    with pytest.raises(InvalidInputError):
        DesignGrid(((0, 1),), (0,))


def test_formulation_parse():
    assert Formulation.parse("MFF") is Formulation.MFF
    with pytest.raises(InvalidInputError):
        Formulation.parse("xyz")


X1 = np.linspace(0, 1, 21)[:, None]
F1 = -((X1[:, 0] - 0.63) ** 2)


def _oracle(seed, f=F1, X=X1, sd=0.01):
    rng = np.random.default_rng(seed)

    def call(x):
        return f[int(np.flatnonzero(np.all(X == x, axis=1))[0])] + rng.normal(0, sd)

    return call


def _cfg(**kw):
    base = dict(kernel=KernelSpec(1.0, (0.2,)), delta_kernel=KernelSpec(1.0, (0.2,)))
    return ModelConfig(**(base | kw))


def test_lsf_first_pick_is_lowest_index():
    tr = run_formulation("lsf", [], _oracle(0), X1, UcbConfig(horizon=1), _cfg(), f_true=F1)
    assert tr.indices == [0]


def test_lsf_equals_csf_without_previous_operators():
    ucb = UcbConfig(horizon=8)
    a = run_formulation("lsf", [], _oracle(1), X1, ucb, _cfg(), f_true=F1)
    b = run_formulation("csf", [], _oracle(1), X1, ucb, _cfg(), f_true=F1)
    assert a.indices == b.indices and a.y == b.y


def test_mff_degenerate_model_equals_lsf_with_pooled_data():
    rng = np.random.default_rng(5)
    prior = [Dataset(X1[i], F1[i] + rng.normal(0, 0.01, 5), 1e-4)
             for i in (rng.choice(21, 5, replace=False) for _ in range(3))]
    ucb = UcbConfig(horizon=6)
    mff_cfg = _cfg(delta_kernel=KernelSpec(1e-12, (0.2,)), rho=1.0, rho_method="fixed",
                   standardize=False, noise_L=1e-4)
    mff = run_formulation("mff", prior, _oracle(2), X1, ucb, mff_cfg, f_true=F1)
    pooled = Dataset.concat(prior, 1e-4)
    lsf = run_formulation("lsf", [], _oracle(2), X1, ucb, _cfg(standardize=False), f_true=F1,
                          initial_data=pooled)
    assert mff.indices == lsf.indices
    np.testing.assert_allclose(mff.y, lsf.y)


def test_mff_requires_history():
    with pytest.raises(InvalidInputError):
        run_formulation("mff", [], _oracle(0), X1, UcbConfig(horizon=1), _cfg())


def test_oracle_failure_marks_trace_incomplete():
    calls = []

    def oracle(x):
        calls.append(x)
        if len(calls) == 3:
            raise RuntimeError("simulator crashed")
        return 0.0

    tr = run_formulation("lsf", [], oracle, X1, UcbConfig(horizon=5), _cfg())
    assert not tr.complete and len(tr) == 2 and "crashed" in tr.error


def test_runs_are_deterministic():
    prior = [Dataset(X1[::4], F1[::4], 1e-4), Dataset(X1[1::4], F1[1::4] + 0.01, 1e-4)]
    for kind in Formulation:
        a = run_formulation(kind, prior, _oracle(9), X1, UcbConfig(horizon=5), _cfg(), f_true=F1)
        b = run_formulation(kind, prior, _oracle(9), X1, UcbConfig(horizon=5), _cfg(), f_true=F1)
        assert a.indices == b.indices and a.y == b.y


def test_mff_finds_optimum_on_shifted_history():
    rng = np.random.default_rng(4)
    prior = [Dataset(X1[idx], F1[idx] + off + rng.normal(0, 0.01, 8), 1e-4)
             for idx, off in ((rng.choice(21, 8, replace=False), o) for o in (0.0, 0.05, -0.03))]
    tr = run_formulation("mff", prior, _oracle(3), X1, UcbConfig(horizon=10), _cfg(), f_true=F1)
    assert tr.r_best[-1] <= 0.01


def test_beta_override():
    tr = run_formulation("lsf", [], _oracle(0), X1, UcbConfig(horizon=3, beta_override=2.0), _cfg())
    assert tr.beta == [2.0, 2.0, 2.0]
