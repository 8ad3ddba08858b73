import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mfpd.coefficients import build_coefficients, four_ball_inclusions, homogeneous
from mfpd.errors import ValidationError
from mfpd.frequency_selection import (
    AdmissibilityThresholds,
    condition_values,
    default_roles,
    evaluate_conditions,
    frequency_sequence,
    psm2_sine_form,
    select_frequency_set,
    verify_bmn,
)
from mfpd.helmholtz import HelmholtzOperator
from mfpd.illumination import parse_illumination


def test_sequence_examples():
    assert frequency_sequence(5.0, 15.0, 0.25, 0.5, 0) == 12.5
    assert frequency_sequence(5.0, 15.0, 0.25, 0.5, 10**9) == pytest.approx(7.5)
    with pytest.raises(ValidationError):
        frequency_sequence(5.0, 15.0, 0.6, 0.6, 0)
    with pytest.raises(ValidationError):
        frequency_sequence(5.0, 4.0)
    with pytest.raises(ValidationError):
        frequency_sequence(5.0, 15.0, l=-1)


@given(st.floats(0.1, 50), st.floats(0.1, 50), st.floats(0.01, 0.49), st.floats(0.01, 0.49), st.integers(0, 10**6))
def test_sequence_inside_gap(l0, gap, a, b, l):
    k = frequency_sequence(l0, l0 + gap, a, b, l)
    assert l0 < k < l0 + gap
    assert frequency_sequence(l0, l0 + gap, a, b, l + 1) <= k


def test_thresholds_validation():
    for bad in ({"p": 0.0}, {"r": -1.0}, {"s": float("inf")}, {"p": float("nan")}):
        with pytest.raises(ValidationError):
            AdmissibilityThresholds(**bad)


def test_harmonic_coordinates_admissible(homog_op):
    row = [homog_op.solve(0.0, p) for p in ("1", "x1", "x2")]
    th = AdmissibilityThresholds(1e-6, 1e-6, 1e-6)
    rep = evaluate_conditions([row], th, "complete")
    assert rep.admissible.all() and rep.is_proper and rep.is_complete
    assert np.allclose(rep.values["psm1"], 1.0) and np.allclose(rep.values["psm2"], 1.0)
    assert np.allclose(rep.values["csm3"], 1.0)
    assert rep.min_K == 1


def _line_ratio(op, mask, k, ills, roles, name):
    row = [op.solve(k, p) for p in ills]
    v = condition_values(row, roles)[name]
    return v[mask].max() / np.median(v)


@pytest.mark.parametrize("k", [1.0, 3.0, 5.0, 7.0, 12.0])
def test_gradient_condition_fails_on_axis(homog_op, disk, k):
    # (x1, 1) as the gradient pair: the determinant vanishes on x2 = 0 up to mesh resolution
    on = np.abs(disk.barycenters[:, 1]) < 1e-12
    assert on.sum() > 0
    assert _line_ratio(homog_op, on, k, ["x1", "1"], (0, 0, 1), "psm2") < 0.1


@pytest.mark.parametrize("k", [1.0, 3.0, 5.0, 7.0, 12.0])
def test_value_condition_fails_on_axis(homog_op, disk, k):
    near = np.abs(disk.barycenters[:, 0]) < 0.01
    assert _line_ratio(homog_op, near, k, ["x1", "1"], (0, 0, 1), "psm1") < 0.1


def test_axis_cells_never_admissible(homog_op, disk):
    on = np.abs(disk.barycenters[:, 1]) < 1e-12
    sols = [[homog_op.solve(k, p) for p in ("x1+2", "x1", "1")] for k in (1.0, 3.0, 7.0)]
    med = max(float(np.median(condition_values(row, (0, 1, 2))["psm2"])) for row in sols)
    th = AdmissibilityThresholds(1e-3, 0.1 * med, 1e-3)
    rep = evaluate_conditions(sols, th, "proper", roles=(0, 1, 2))
    assert not rep.covered[on].any()
    assert not rep.is_proper


def test_sine_identity(disk):
    coeffs = build_coefficients(disk, four_ball_inclusions([1, 0, 2, 0], [0, 2, 0, 1]))
    op = HelmholtzOperator(disk, coeffs)
    row = [op.solve(4.0, p) for p in ("1", "x1+0.3*x2", "x2-x1*x2")]
    det = condition_values(row, (0, 1, 2))["psm2"]
    sine = psm2_sine_form(row, 1, 2)
    assert np.all(np.abs(det - sine) <= 1e-10 * np.maximum(sine, 1e-300) + 1e-14)


def test_role_aliasing(homog_op):
    sols = [[homog_op.solve(k, p) for p in ("x1+2", "x2+2")] for k in (1.0, 3.0)]
    th = AdmissibilityThresholds(1e-2, 1e-2, 1e-2)
    rep = evaluate_conditions(sols, th, "proper")
    assert rep.info["roles"] == [0, 0, 1]
    for l, row in enumerate(sols):
        psm1 = np.abs(row[0].u[homog_op.mesh.triangles].mean(axis=1))
        g2, g3 = row[0].grad, row[1].grad
        psm2 = np.abs(g2[:, 0] * g3[:, 1] - g2[:, 1] * g3[:, 0])
        assert np.array_equal(rep.values["psm1"][l], psm1)
        assert np.allclose(rep.values["psm2"][l], psm2, rtol=0, atol=0)
        assert np.array_equal(rep.admissible[l], (psm1 >= 1e-2) & (psm2 >= 1e-2))


def test_illumination_count_errors(homog_op):
    row = [homog_op.solve(1.0, "x1")]
    with pytest.raises(ValidationError):
        evaluate_conditions([row], AdmissibilityThresholds())
    row2 = [homog_op.solve(1.0, p) for p in ("x1", "x2")]
    with pytest.raises(ValidationError):
        evaluate_conditions([row2], AdmissibilityThresholds(), "complete")
    with pytest.raises(ValidationError):
        evaluate_conditions([row2], AdmissibilityThresholds(), "proper", roles=(0, 1, 2))
    with pytest.raises(ValidationError):
        default_roles(1, "proper")


@settings(max_examples=20, deadline=None)
@given(st.floats(1e-4, 1.0), st.floats(1e-4, 1.0), st.floats(0.1, 1.0))
def test_monotonicity(homog_op_coarse, p, r, shrink):
    sols = [[homog_op_coarse.solve(k, f) for f in ("x1+2", "x1", "x2")] for k in (1.0, 4.0, 9.0)]
    th = AdmissibilityThresholds(p, r, 1e-3)
    low = AdmissibilityThresholds(p * shrink, r * shrink, 1e-3)
    small = evaluate_conditions(sols[:2], th)
    big = evaluate_conditions(sols, th)
    assert np.all(big.admissible[:2] == small.admissible)
    assert np.all(big.covered >= small.covered)
    lowered = evaluate_conditions(sols, low)
    assert np.all(lowered.covered >= big.covered)


def test_select_homogeneous_single_frequency(disk_coarse, homog_op_coarse):
    K, rep, sols = select_frequency_set(
        disk_coarse, homog_op_coarse.coeffs, ["1", "x1", "x2"], AdmissibilityThresholds(1e-6, 1e-6, 1e-6), operator=homog_op_coarse
    )
    assert len(K) == 1 and rep.is_proper
    spec = homog_op_coarse.spectrum()
    assert spec.lambda0 < K[0] < spec.lambda1


def test_select_unreachable(disk_coarse, homog_op_coarse):
    K, rep, _ = select_frequency_set(
        disk_coarse, homog_op_coarse.coeffs, ["1", "x1", "x2"], AdmissibilityThresholds(1e6, 1e6, 1e6), max_l=3,
        operator=homog_op_coarse,
    )
    assert len(K) == 3 and not rep.is_proper
    assert len(rep.uncovered_cells) == disk_coarse.n_triangles
    assert rep.min_K is None
    with pytest.raises(ValidationError):
        select_frequency_set(disk_coarse, homog_op_coarse.coeffs, ["1", "x1", "x2"], max_l=0)


@settings(max_examples=8, deadline=None)
@given(st.lists(st.sampled_from([0, 1, 2]), min_size=8, max_size=8))
def test_select_inside_gap(disk_coarse, vals):
    coeffs = build_coefficients(disk_coarse, four_ball_inclusions(vals[:4], vals[4:]))
    K, rep, _ = select_frequency_set(disk_coarse, coeffs, ["1", "x1", "x2"], max_l=4)
    lam0, lam1 = rep.info["lambda0"], rep.info["lambda1"]
    assert all(lam0 < k < lam1 for k in K)
    assert all(min(k - lam0, lam1 - k) / k > 0.05 for k in K)
    assert len(K) <= 3 and rep.is_proper


def test_report_export(homog_op, tmp_path):
    sols = [[homog_op.solve(k, p) for p in ("x1+2", "x2+2")] for k in (1.0, 3.0)]
    rep = evaluate_conditions(sols, AdmissibilityThresholds())
    path = rep.write_csv(tmp_path / "adm.csv")
    lines = path.read_text().splitlines()
    assert lines[0].startswith("cell,admissible_k,psm1_k0,psm2_k0")
    assert len(lines) == homog_op.mesh.n_triangles + 1
    s = rep.summary()
    assert s["is_proper"] is True and s["min_K"] == rep.min_K
    m = rep.min_K
    assert rep.admissible[:m].any(axis=0).all() and not rep.admissible[: m - 1].any(axis=0).all()
    assert rep.admissible_ks(0) == [float(k) for k in rep.ks[rep.admissible[:, 0]]]


def test_bmn_examples(disk):
    assert verify_bmn("x1", "x2", disk).passed
    assert verify_bmn("x1+2", "x2+2", disk).passed
    bad = verify_bmn("x1", "1", disk)
    assert not bad.passed and not bad.nondegenerate
    assert bad.first_violation is not None
    nonconvex = verify_bmn("x1", "x2 + 0.6*x1*x1*x1*x1 - 0.3*x2*x2*x2", disk)
    assert not nonconvex.convex and nonconvex.first_violation is not None
    assert verify_bmn("x1", "x2", disk).jacobian_positive
