import math

import numpy as np
import pytest

from conftest import closed_form, model_values, tensor_grid
from tnn_spde.diffnet import NetArchitecture
from tnn_spde.errors import NumericFailureError
from tnn_spde.metrics import error_report, projection_error_h1, projection_error_l2
from tnn_spde.problem import make_problem
from tnn_spde.quad import composite_rule
from tnn_spde.tnn import build_factors, model_for_problem
from tnn_spde.validate import exact_solution_model

PI = math.pi


@pytest.fixture
def ex1():
    spec = make_problem("example1", 2)
    return spec, [composite_rule(I, 50, 8) for I in spec.domains]


def dense_norms(label, M):
    pts, w = tensor_grid(M)
    cf = closed_form(label, M, pts[:, :M], pts[:, M])
    # f_x by central differences of the closed form (about 1e-9 relative)
    h = 1e-6
    fp = closed_form(label, M, pts[:, :M], pts[:, M] + h)["f"]
    fm = closed_form(label, M, pts[:, :M], pts[:, M] - h)["f"]
    f_x = (fp - fm) / (2 * h)
    return math.sqrt(np.sum(w * cf["f"] ** 2)), math.sqrt(np.sum(w * f_x**2))


def test_zero_at_truth(ex1):
    spec, rules = ex1
    rep = error_report(exact_solution_model(spec), spec, rules)
    assert rep.e_l2 <= 1e-9 and rep.e_h1 <= 1e-9
    assert rep.uu_l2 == pytest.approx(0.125, rel=1e-13)
    assert rep.uu_h1 == pytest.approx(PI**2 / 8, rel=1e-13)


def test_orthogonal_model(ex1):
    spec, rules = ex1
    model = exact_solution_model(spec)
    model.subnets[2].weights[0][...] = 2 * PI  # spatial factor sin(2 pi x)
    f_l2, f_h1 = dense_norms("example1", 2)
    rep = error_report(model, spec, rules)
    assert rep.f_l2 == pytest.approx(f_l2, rel=1e-10)
    assert rep.f_h1 == pytest.approx(f_h1, rel=1e-7)
    assert rep.e_l2 == pytest.approx(math.sqrt(0.125) / f_l2, rel=1e-10)
    assert rep.e_h1 == pytest.approx(math.sqrt(PI**2 / 8) / rep.f_h1, rel=1e-10)


def test_inner_products_against_dense_oracle(ex1):
    spec, rules = ex1
    model = model_for_problem(spec, NetArchitecture(2, 10, 3), 4)
    tables = build_factors(model, rules, [2, 2, 2])
    pts, w = tensor_grid(2)
    psi, psi_x, _ = model_values(model, tables, pts)
    cf = closed_form("example1", 2, pts[:, :2], pts[:, 2])
    rep = error_report(model, spec, rules)
    assert rep.uv_l2 == pytest.approx(np.sum(w * cf["u"] * psi), rel=1e-10)
    assert rep.vv_l2 == pytest.approx(np.sum(w * psi * psi), rel=1e-10)
    assert rep.uv_h1 == pytest.approx(np.sum(w * cf["u_x"] * psi_x), rel=1e-10)
    assert rep.vv_h1 == pytest.approx(np.sum(w * psi_x * psi_x), rel=1e-10)
    res = np.sum(w * cf["u"] ** 2) - np.sum(w * cf["u"] * psi) ** 2 / np.sum(w * psi * psi)
    assert rep.e_l2 == pytest.approx(math.sqrt(res) / rep.f_l2, rel=1e-8)


def test_scale_invariance_and_cauchy_schwarz(ex1):
    spec, rules = ex1
    for seed in range(3):
        model = model_for_problem(spec, NetArchitecture(2, 10, 3), seed)
        r1 = error_report(model, spec, rules)
        model.c[...] *= 10.0
        r2 = error_report(model, spec, rules)
        assert abs(r1.e_l2 - r2.e_l2) < 1e-12 and abs(r1.e_h1 - r2.e_h1) < 1e-12
        for a in ("l2", "h1"):
            uv, uu, vv = (getattr(r1, f"{k}_{a}") for k in ("uv", "uu", "vv"))
            assert uv**2 <= uu * vv + 1e-12
        assert r1.e_l2 >= 0 and r1.e_h1 >= 0 and np.isfinite(r1.e_h1)
        assert r1.e_h1_full >= r1.e_h1


def test_wrappers_and_flag(ex1):
    spec, rules = ex1
    model = model_for_problem(spec, NetArchitecture(2, 10, 3), 1)
    rep = error_report(model, spec, rules)
    assert projection_error_l2(model, spec, rules) == rep.e_l2
    assert projection_error_h1(model, spec, rules) == rep.e_h1
    assert projection_error_h1(model, spec, rules, full_norm=True) == rep.e_h1_full


def test_degenerate_model(ex1):
    spec, rules = ex1
    model = model_for_problem(spec, NetArchitecture(2, 10, 3), 1)
    model.c[...] = 0.0
    with pytest.raises(NumericFailureError):
        error_report(model, spec, rules)


def test_metrics_at_larger_M():
    spec = make_problem("example3", 10)
    rules = [composite_rule(I, 50, 8) for I in spec.domains]
    rep = error_report(exact_solution_model(spec), spec, rules)
    assert rep.e_l2 <= 1e-9 and rep.e_h1 <= 1e-9
