import math

import numpy as np
import pytest

from tnn_spde.diffnet import NetArchitecture
from tnn_spde.errors import InvalidArgumentError, NumericFailureError
from tnn_spde.loss import loss_plan
from tnn_spde.optim import (
    LBFGS, Adam, History, HistoryRow, Schedule, Stage, adam_step, desk_schedule, lbfgs_step, paper_schedule,
    read_history, train,
)
from tnn_spde.problem import make_problem
from tnn_spde.quad import composite_rule
from tnn_spde.tnn import load_checkpoint, model_for_problem

PI = math.pi


def test_adam_first_step():
    theta = np.array([1.0])
    state = Adam(1)
    adam_step(state, theta, theta.copy(), 1e-3)  # f = theta^2 / 2, g = theta
    assert theta[0] == pytest.approx(0.999, abs=1e-10)
    assert state.t == 1


def test_adam_recurrence_by_hand():
    state = Adam(2)
    theta = np.array([0.5, -2.0])
    grads = [np.array([0.2, -1.0]), np.array([0.1, 3.0])]
    m = v = np.zeros(2)
    ref = theta.copy()
    for t, g in enumerate(grads, 1):
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref = ref - 0.01 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
        state.step(theta, g, 0.01)
    np.testing.assert_allclose(theta, ref, rtol=1e-15)


def test_adam_zero_gradient_and_step_bound(rng):
    theta = rng.standard_normal(5)
    ref = theta.copy()
    state = Adam(5)
    for _ in range(10):
        state.step(theta, np.zeros(5), 0.1)
    assert np.array_equal(theta, ref)
    state = Adam(5)
    for _ in range(200):
        before = theta.copy()
        state.step(theta, rng.standard_normal(5) * 10 ** rng.uniform(-6, 3), 1e-3)
        assert np.all(np.abs(theta - before) <= 10 * 1e-3)


def test_adam_errors():
    state = Adam(3)
    with pytest.raises(NumericFailureError) as err:
        state.step(np.zeros(3), np.array([0.0, np.nan, 0.0]), 1e-3, blocks=[("c", slice(0, 1)), ("subnet[0]", slice(1, 3))])
    assert err.value.where == "subnet[0]"
    with pytest.raises(InvalidArgumentError):
        state.step(np.zeros(3), np.zeros(2), 1e-3)


def test_lbfgs_empty_history_is_steepest_descent():
    state = LBFGS(3)
    theta = np.array([1.0, 2.0, 3.0])
    g = np.array([0.5, -1.0, 2.0])
    lbfgs_step(state, theta, g, 0.5)
    np.testing.assert_allclose(theta, [0.75, 2.5, 2.0])


def test_lbfgs_one_pair_newton_in_1d():
    a = 4.0
    state = LBFGS(1)
    theta = np.array([3.0])
    state.step(theta, a * theta, 0.1)
    g = a * theta
    state.push(theta - np.array([3.0]), g - a * np.array([3.0]))
    d = state.direction(g)
    assert d[0] == pytest.approx(-g[0] / a, rel=1e-12)


def test_lbfgs_curvature_guard():
    state = LBFGS(2)
    assert not state.push(np.array([1.0, 0.0]), np.array([-1.0, 0.0]))
    assert not state.push(np.array([1e-8, 0.0]), np.array([1e-8, 0.0]))
    assert len(state) == 0
    assert state.push(np.array([1.0, 0.0]), np.array([2.0, 0.0]))
    assert len(state) == 1


def test_lbfgs_full_history_reproduces_newton(rng):
    n = 5
    A = rng.standard_normal((n, n))
    A = A @ A.T + n * np.eye(n)
    state = LBFGS(n, memory=10)
    # with A-conjugate pairs (as exact line searches produce) the recursion recovers A^-1
    for s in np.linalg.eigh(A)[1].T:
        state.push(s, A @ s)
    g = rng.standard_normal(n)
    np.testing.assert_allclose(state.direction(g), -np.linalg.solve(A, g), rtol=1e-10, atol=1e-12)


def test_lbfgs_memory_bound_and_minimizes_quadratic(rng):
    A = np.diag([1.0, 3.0, 10.0])
    state = LBFGS(3, memory=2)
    theta = np.array([1.0, -1.0, 0.5])
    for _ in range(60):
        state.step(theta, A @ theta, 1.0)
        assert len(state) <= 2
    assert np.linalg.norm(theta) < 1e-8


def test_lbfgs_non_finite_direction_falls_back():
    state = LBFGS(2)
    with np.errstate(over="ignore"):
        state.push(np.array([1e200, 0.0]), np.array([1e200, 1e200]))
    theta = np.array([1.0, 1.0])
    state.step(theta, np.array([1e300, 1e300]), 1e-300)
    assert state.fallbacks == 1


def test_schedule_validation_and_presets():
    with pytest.raises(InvalidArgumentError):
        Stage("sgd", 1e-3, 10)
    with pytest.raises(InvalidArgumentError):
        Stage("adam", 1e-3, 0)
    with pytest.raises(InvalidArgumentError):
        Schedule(())
    assert desk_schedule().total_steps == 20_500
    s = paper_schedule(10)
    assert s.form == "strong" and [(st.kind, st.lr, st.steps) for st in s.stages] == [("adam", 5e-4, 100_000), ("lbfgs", 0.5, 10_000)]
    s = paper_schedule(50)
    assert s.form == "weak" and [(st.kind, st.lr, st.steps) for st in s.stages] == [("adam", 1e-4, 95_000), ("lbfgs", 0.1, 5_000)]


@pytest.fixture
def small():
    spec = make_problem("example1", 2)
    rules = [composite_rule(I, 50, 8) for I in spec.domains]
    return spec, rules


def test_train_bookkeeping(small):
    spec, rules = small
    model = model_for_problem(spec, NetArchitecture(1, 8, 2), 0)
    hist = train(model, spec, rules, Schedule((Stage("adam", 1e-3, 100),), "weak", eval_every=10))
    assert [r.step for r in hist.rows] == list(range(0, 101, 10))
    assert len(hist) == 11 and not hist.interrupted
    assert all(np.isfinite([r.loss, r.e_l2, r.e_h1]).all() for r in hist.rows)


def test_train_reaches_ritz_minimum(small):
    spec, rules = small
    model = model_for_problem(spec, NetArchitecture(3, 100, 5), 0)
    hist = train(model, spec, rules, Schedule((Stage("adam", 1e-3, 2000),), "weak", eval_every=20))
    assert abs(hist.rows[-1].loss + PI**2 / 16) <= 1e-3
    loss = hist.column("loss")
    k = max(1, len(loss) // 10)
    assert np.median(loss[-k:]) < np.median(loss[:k])
    assert np.all(loss >= -PI**2 / 16 - 1e-9)


def test_train_is_deterministic_and_mixes_stages(small):
    spec, rules = small
    sched = Schedule((Stage("adam", 1e-3, 30), Stage("lbfgs", 0.1, 10)), "strong", eval_every=5)
    runs = []
    for _ in range(2):
        model = model_for_problem(spec, NetArchitecture(2, 10, 3), 4)
        runs.append((train(model, spec, rules, sched), model.theta.copy()))
    assert [(r.loss, r.e_l2, r.e_h1) for r in runs[0][0].rows] == [(r.loss, r.e_l2, r.e_h1) for r in runs[1][0].rows]
    assert np.array_equal(runs[0][1], runs[1][1])
    assert runs[0][0].rows[-1].stage == "lbfgs" and runs[0][0].rows[-1].step == 40


def test_callback_stops_training(small):
    spec, rules = small
    model = model_for_problem(spec, NetArchitecture(1, 8, 2), 0)
    hist = train(model, spec, rules, desk_schedule("weak", 100, 1e-3, 0, 0.1, eval_every=10),
                 callbacks=[lambda row, m: row.step >= 30])
    assert hist.interrupted and hist.rows[-1].step == 30


def test_numeric_failure_restores_last_good(small, tmp_path):
    spec, rules = small
    model = model_for_problem(spec, NetArchitecture(1, 8, 2), 0)
    plan = loss_plan(spec, rules, "weak")
    original = plan.evaluate
    calls = {"n": 0}

    def flaky(m, tables=None, need_grad=True):
        calls["n"] += 1
        rep = original(m, tables, need_grad)
        if calls["n"] == 6:
            rep.grad[3] = np.inf
        return rep

    plan.evaluate = flaky
    ckpt = tmp_path / "last.json"
    try:
        with pytest.raises(NumericFailureError):
            train(model, spec, rules, Schedule((Stage("adam", 1e-3, 20),), "weak", 5), checkpoint_path=ckpt)
    finally:
        del plan.evaluate
    assert np.array_equal(load_checkpoint(ckpt).theta, model.theta)
    assert np.all(np.isfinite(model.theta))


def test_history_csv_roundtrip(tmp_path):
    hist = History()
    hist.append(HistoryRow(0, "adam", 0.1 + 0.2, 1 / 3, 2 / 3, 1.25))
    hist.append(HistoryRow(10, "lbfgs", -1e-300, 5e-324, 1e300, 2.5))
    with pytest.raises(InvalidArgumentError):
        hist.append(HistoryRow(10, "lbfgs", 0, 0, 0, 0))
    path = tmp_path / "m.csv"
    hist.write_csv(path)
    back = read_history(path)
    assert [r.__dict__ for r in back.rows] == [r.__dict__ for r in hist.rows]
    assert path.read_text().splitlines()[0] == "step,stage,loss,e_l2,e_h1,elapsed_s"
    hist.write_csv(path, deterministic=True)
    assert all(r.elapsed_s == 0.0 for r in read_history(path).rows)
