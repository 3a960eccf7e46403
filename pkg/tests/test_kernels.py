import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bls.errors import DataError
from bls.kernels import DesignMatrix, KernelKind, KernelSpec, build_design, gram, kernel_eval

SUMCUBIC = KernelSpec(KernelKind.SPLINE_SUM_CUBIC)
SPLINE = KernelSpec()
finite = st.floats(-20, 20, allow_nan=False)


# printed formula: 1 + ab + ab*m - (a+b)/2*m^2 + (a+b)/3*m^3
@pytest.mark.parametrize("a,b,expected", [
    (0.0, 0.0, 1.0),
    (1.0, 1.0, 8.0 / 3.0),
    (1.0, 2.0, 4.5),
    (2.0, 2.0, 1 + 4 + 8 - 8 + 32.0 / 3.0),
])
def test_sum_cubic_spline_values(a, b, expected):
    assert kernel_eval(SUMCUBIC, [a], [b]) == pytest.approx(expected, rel=1e-14)


# standard cubic-spline form: 1 + ab + ab*m - (a+b)/2*m^2 + m^3/3
@pytest.mark.parametrize("a,b,expected", [
    (0.0, 0.0, 1.0),
    (1.0, 1.0, 7.0 / 3.0),
    (1.0, 2.0, 23.0 / 6.0),
    (2.0, 2.0, 23.0 / 3.0),
    (-1.0, 2.0, 1 - 2 + 2 - 0.5 - 1.0 / 3.0),
])
def test_standard_spline_values(a, b, expected):
    assert kernel_eval(SPLINE, [a], [b]) == pytest.approx(expected, rel=1e-14)


def test_gaussian_zero_distance_is_one():
    assert kernel_eval(KernelSpec(KernelKind.GAUSSIAN, 1.0), [0.3, -2.0], [0.3, -2.0]) == 1.0


def test_gaussian_value():
    k = kernel_eval(KernelSpec(KernelKind.GAUSSIAN, 2.0), [0.0, 0.0], [3.0, 4.0])
    assert k == pytest.approx(np.exp(-25.0 / 8.0))


def test_design_identity_passthrough():
    X = np.arange(6.0).reshape(3, 2)
    d = build_design(KernelSpec(KernelKind.IDENTITY), X)
    np.testing.assert_array_equal(d.values, X)
    np.testing.assert_array_equal(d.column_origin, [0, 1])


def test_design_single_point():
    np.testing.assert_array_equal(build_design(SUMCUBIC, [[0.0]]).values, [[1.0]])


def test_design_two_points_sum_cubic():
    d = build_design(SUMCUBIC, np.array([[1.0], [2.0]]))
    np.testing.assert_allclose(d.values, [[8 / 3, 4.5], [4.5, 47 / 3]], rtol=1e-14)


def test_design_is_read_only():
    d = build_design(SPLINE, np.linspace(-1, 1, 4)[:, None])
    with pytest.raises(ValueError):
        d.values[0, 0] = 5.0


@settings(max_examples=200, deadline=None)
@given(st.lists(finite, min_size=1, max_size=3), st.data())
def test_kernel_symmetry(a, data):
    b = data.draw(st.lists(finite, min_size=len(a), max_size=len(a)))
    for spec in (SPLINE, SUMCUBIC, KernelSpec(KernelKind.GAUSSIAN, 1.5)):
        assert kernel_eval(spec, a, b) == kernel_eval(spec, b, a)


@settings(max_examples=100, deadline=None)
@given(finite, finite, finite, finite)
def test_product_spline_factorises(a1, a2, b1, b2):
    k2 = kernel_eval(SPLINE, [a1, a2], [b1, b2])
    k1 = kernel_eval(SPLINE, [a1], [b1]) * kernel_eval(SPLINE, [a2], [b2])
    assert k2 == pytest.approx(k1, rel=1e-12, abs=1e-12)


def test_gram_symmetric_and_gaussian_psd():
    rng = np.random.default_rng(3)
    X = rng.uniform(-5, 5, size=(40, 2))
    for spec in (SPLINE, KernelSpec(KernelKind.GAUSSIAN)):
        K = build_design(spec, X).values
        np.testing.assert_array_equal(K, K.T)
    K = build_design(KernelSpec(KernelKind.GAUSSIAN, 0.7), X).values
    assert np.linalg.eigvalsh(K).min() >= -1e-8 * np.linalg.norm(K)


def test_standard_spline_is_psd_on_positive_inputs():
    # the spline form is a valid kernel on x >= 0 only
    K = build_design(SPLINE, np.linspace(0, 10, 60)[:, None]).values
    assert np.linalg.eigvalsh(K).min() >= -1e-8 * np.linalg.norm(K)


def test_gaussian_default_width_is_median_distance():
    X = np.array([[0.0], [1.0], [3.0]])
    d = build_design(KernelSpec(KernelKind.GAUSSIAN), X)
    assert d.spec.width == 2.0


def test_dimension_mismatch():
    with pytest.raises(DataError):
        kernel_eval(SPLINE, [1.0, 2.0], [1.0])
    with pytest.raises(DataError):
        gram(SPLINE, np.zeros((2, 2)), np.zeros((2, 3)))


def test_non_finite_input_rejected():
    with pytest.raises(DataError):
        kernel_eval(SPLINE, [np.nan], [1.0])
    with pytest.raises(DataError):
        build_design(SPLINE, [[np.inf]])


@pytest.mark.parametrize("text,kind,width", [
    ("spline", KernelKind.LINEAR_SPLINE, None),
    ("SPLINE", KernelKind.LINEAR_SPLINE, None),
    ("spline-sumcubic", KernelKind.SPLINE_SUM_CUBIC, None),
    ("gaussian", KernelKind.GAUSSIAN, None),
    ("gaussian:2.5", KernelKind.GAUSSIAN, 2.5),
    ("identity", KernelKind.IDENTITY, None),
])
def test_parse(text, kind, width):
    spec = KernelSpec.parse(text)
    assert (spec.kind, spec.width) == (kind, width)
    assert KernelSpec.from_dict(spec.to_dict()) == spec


@pytest.mark.parametrize("text", ["poly", "spline:2", "gaussian:-1", "gaussian:0", "gaussian:x"])
def test_parse_rejects(text):
    with pytest.raises(ValueError):
        KernelSpec.parse(text)


def test_design_matrix_validation():
    with pytest.raises(DataError):
        DesignMatrix(np.zeros(3), [0, 1, 2])
    with pytest.raises(DataError):
        DesignMatrix(np.zeros((2, 2)), [0])
