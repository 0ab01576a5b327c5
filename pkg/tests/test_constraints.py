import numpy as np
import pytest

from hardhank import autodiff as ad
from hardhank.constraints import (
    BoundedSumSpec,
    binding_cap_shift,
    bounded_activation,
    max_binding_count,
    minshift_scale,
    project_clamp_shift,
    project_redistribute,
    softmax_scale,
)
from hardhank.errors import ProjectionSpecError
from tests.helpers import central_difference, reference_redistribute


def _spec(a, b, C):
    return BoundedSumSpec(a=np.asarray(a, dtype=float), b=np.asarray(b, dtype=float), C=np.asarray(C, dtype=float))


def _random_instance(rng, k):
    a = rng.uniform(-1.0, 1.0, size=k)
    b = a + rng.uniform(0.1, 2.0, size=k)
    C = a.sum() + rng.uniform(0.05, 0.95) * (b.sum() - a.sum())
    x = np.exp(rng.normal(scale=2.0, size=k))
    return x, _spec(a, b, C)


def test_bounded_activation_closed_forms():
    assert bounded_activation(0.0, "interval", a=0.0, b=1.0) == pytest.approx(0.5)
    assert bounded_activation(0.0, "lower", a=0.0) == pytest.approx(np.log(2.0))
    assert bounded_activation(0.0, "upper", b=3.0) == pytest.approx(3.0 - np.log(2.0))
    assert bounded_activation(0.0, "lower", a=1.0, smooth="exp") == pytest.approx(2.0)


def test_bounded_activation_rejects_bad_input():
    with pytest.raises(ValueError):
        bounded_activation(np.nan, "lower", a=0.0)
    with pytest.raises(ValueError):
        bounded_activation(0.0, "interval", a=1.0, b=1.0)
    with pytest.raises(ValueError):
        bounded_activation(0.0, "sideways", a=0.0)


def test_softmax_scale_examples():
    assert softmax_scale(np.zeros(2), 1.0) == pytest.approx([0.5, 0.5])
    assert softmax_scale(np.zeros(4), 2.0) == pytest.approx([0.5] * 4)
    assert softmax_scale(np.array([np.log(3.0), 0.0]), 1.0) == pytest.approx([0.75, 0.25])


def test_minshift_scale_maps_minimum_to_zero():
    out = minshift_scale(np.array([1.0, 2.0, 4.0]), 2.0)
    assert out == pytest.approx([0.0, 0.5, 1.5])
    with pytest.raises(ValueError):
        minshift_scale(np.ones(3), 1.0)


def test_project_redistribute_examples():
    result = project_redistribute(np.array([1.0, 1.0]), _spec([0, 0], [2, 2], 2.0))
    assert result.w == pytest.approx([1.0, 1.0])

    result = project_redistribute(np.array([1.0, 3.0]), _spec([0, 0], [1, 3], 2.0))
    assert result.w == pytest.approx([0.2, 1.8])
    assert not result.binding_mask.any()

    result = project_redistribute(np.array([1.0, 9.0]), _spec([0, 0], [1, 1], 1.5), bind_last="upper")
    assert result.w == pytest.approx([0.5, 1.0])
    assert result.binding_mask.tolist() == [False, True]
    assert not result.edge_case_flag


def test_project_clamp_shift_examples():
    assert project_clamp_shift(np.array([1.0, 1.0]), _spec([0, 0], [2, 2], 2.0)).w == pytest.approx([1.0, 1.0])
    assert project_clamp_shift(np.array([1.0, 9.0]), _spec([0, 0], [1, 1], 1.5)).w == pytest.approx([0.5, 1.0])
    assert project_clamp_shift(np.array([1.0, 3.0]), _spec([0, 0], [1, 3], 2.0)).w == pytest.approx([0.2, 1.8])


def test_spec_violations_raise():
    with pytest.raises(ProjectionSpecError):
        project_redistribute(np.ones(2), _spec([0, 0], [1, 1], 2.5))
    with pytest.raises(ProjectionSpecError):
        project_redistribute(np.ones(2), _spec([0, 1], [1, 1], 1.5))
    with pytest.raises(ProjectionSpecError):
        project_clamp_shift(np.array([1.0, -1.0]), _spec([0, 0], [1, 1], 1.0))


def _random_batch(rng, k, count):
    a = rng.uniform(-1.0, 1.0, size=(count, k))
    b = a + rng.uniform(0.1, 2.0, size=(count, k))
    share = rng.uniform(0.05, 0.95, size=count)
    C = a.sum(axis=-1) + share * (b.sum(axis=-1) - a.sum(axis=-1))
    x = np.exp(rng.normal(scale=2.0, size=(count, k)))
    return x, BoundedSumSpec(a=a, b=b, C=C)


def _rescaled(x, spec):
    z_prime = (spec.b - spec.a) * x / x.sum() + spec.a
    return spec.C * z_prime / z_prime.sum()


@pytest.mark.parametrize("seed", range(100))
def test_projections_are_feasible_on_random_instances(seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(2, 129))
    x, spec = _random_batch(rng, k, 100)
    for result in (project_redistribute(x, spec), project_clamp_shift(x, spec)):
        w = result.w
        assert np.all(w >= spec.a - 1e-12)
        assert np.all(w <= spec.b + 1e-12)
        exact = ~result.edge_case_flag
        gap = np.abs(w.sum(axis=-1) - spec.C)[exact]
        assert np.all(gap <= 1e-10 * np.maximum(1.0, np.abs(spec.C[exact])))


@pytest.mark.parametrize("seed", range(10))
def test_project_redistribute_matches_loop_reference(seed):
    rng = np.random.default_rng(100 + seed)
    x, spec = _random_instance(rng, 6)
    result = project_redistribute(x, spec)
    if not result.edge_case_flag:
        assert result.w == pytest.approx(reference_redistribute(x, spec.a, spec.b, float(spec.C)), abs=1e-12)


def test_projection_is_batched_over_leading_axes():
    rng = np.random.default_rng(7)
    rows = [_random_instance(rng, 5) for _ in range(4)]
    x = np.stack([row[0] for row in rows])
    spec = BoundedSumSpec(
        a=np.stack([row[1].a for row in rows]),
        b=np.stack([row[1].b for row in rows]),
        C=np.array([row[1].C for row in rows]),
    )
    batched = project_redistribute(x, spec)
    for index, (row_x, row_spec) in enumerate(rows):
        assert batched.w[index] == pytest.approx(project_redistribute(row_x, row_spec).w, abs=1e-14)


def test_projection_is_permutation_equivariant():
    rng = np.random.default_rng(11)
    x, spec = _random_instance(rng, 9)
    perm = rng.permutation(9)
    permuted = _spec(spec.a[perm], spec.b[perm], spec.C)
    for project in (project_redistribute, project_clamp_shift):
        assert np.array_equal(project(x, spec).w[perm], project(x[perm], permuted).w)


def _generic_instance(rng, k=5, margin=1e-3):
    """Redraw until every rescaled element is at least ``margin`` away from both bounds."""
    for _ in range(200):
        x, spec = _random_instance(rng, k)
        z = _rescaled(x, spec)
        if np.min(np.abs(z - spec.a)) > margin and np.min(np.abs(z - spec.b)) > margin:
            return x, spec
    raise AssertionError("no generic instance drawn")


@pytest.mark.parametrize("seed", range(100))
def test_projection_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(200 + seed)
    x, spec = _generic_instance(rng)
    weights = rng.normal(size=5)

    for project in (project_redistribute, project_clamp_shift):
        def loss(v):
            return ad.sum(ad.multiply(project(v, spec).w, weights))

        grad = ad.gradient(loss, x)
        numeric = central_difference(lambda v: float(loss(v)), x, h=1e-6)
        assert grad == pytest.approx(numeric, rel=1e-5, abs=1e-8)


@pytest.mark.parametrize("seed", range(20))
def test_interior_rescaled_vector_is_returned_unchanged(seed):
    rng = np.random.default_rng(400 + seed)
    for _ in range(200):
        x, spec = _random_instance(rng, 4)
        z = _rescaled(x, spec)
        if np.all(z > spec.a) and np.all(z < spec.b):
            break
    else:
        raise AssertionError("no interior instance drawn")

    redistributed = project_redistribute(x, spec)
    shifted = project_clamp_shift(x, spec)
    assert redistributed.w == pytest.approx(z, rel=1e-12, abs=1e-14)
    assert shifted.w == pytest.approx(z, rel=1e-12, abs=1e-14)
    assert not redistributed.edge_case_flag and not shifted.edge_case_flag


@pytest.mark.parametrize("seed", range(20))
def test_upper_bind_last_keeps_zero_lower_bound_strict(seed):
    rng = np.random.default_rng(600 + seed)
    k = int(rng.integers(2, 65))
    b = rng.uniform(0.1, 2.0, size=(50, k))
    C = rng.uniform(0.05, 0.95, size=50) * b.sum(axis=-1)
    x = np.exp(rng.normal(size=(50, k)))
    result = project_redistribute(x, BoundedSumSpec(a=np.zeros((50, k)), b=b, C=C), bind_last="upper")
    rows = ~result.edge_case_flag
    assert np.all(result.w[rows] > 1e-12)
    at_upper = np.abs(result.w - b) <= 1e-12 * np.maximum(1.0, b)
    assert np.array_equal(result.binding_mask[rows], at_upper[rows])


def test_positive_lower_bound_can_be_reached_exactly():
    # the tiny first input rescales below a = 0.5 and is clamped onto it
    result = project_redistribute(np.array([1e-6, 1.0]), _spec([0.5, 0.0], [1.0, 2.0], 1.0), bind_last="upper")
    assert result.w == pytest.approx([0.5, 0.5])
    assert result.w[0] == 0.5
    assert result.binding_mask.tolist() == [True, False]
    assert not result.edge_case_flag


def test_binding_cap_shift_example():
    spec = _spec([0, 0], [1, 1], 1.5)
    shifted = binding_cap_shift(np.array([0.15, 1.35]), spec)
    assert shifted == pytest.approx([1.2, 2.4])
    rescaled = 1.5 * shifted / shifted.sum()
    assert rescaled == pytest.approx([0.5, 1.0])


def test_binding_cap_shift_identity_when_already_on_bound():
    spec = _spec([0, 0], [1, 1], 1.5)
    z = np.array([0.5, 1.0])
    assert binding_cap_shift(z, spec) == pytest.approx(z)


@pytest.mark.parametrize("seed", range(20))
def test_binding_cap_shift_binds_at_most_i_star_elements(seed):
    rng = np.random.default_rng(800 + seed)
    k = int(rng.integers(3, 9))
    spec = _spec(np.zeros(k), np.ones(k), rng.uniform(1.05, 1.95))
    assert max_binding_count(spec) == 1
    z = rng.uniform(0.1, 2.0, size=k)

    shifted = binding_cap_shift(z, spec)
    rescaled = spec.C * shifted / shifted.sum()
    assert rescaled.max() == pytest.approx(1.0, rel=1e-12)
    assert np.sum(rescaled >= 1.0 - 1e-12) <= 1


def test_binding_cap_shift_count_with_two_caps():
    spec = _spec([0, 0, 0, 0], [1, 1, 1, 1], 2.5)
    assert max_binding_count(spec) == 2
    shifted = binding_cap_shift(np.array([0.1, 0.2, 3.0, 4.0]), spec)
    rescaled = spec.C * shifted / shifted.sum()
    assert rescaled[2] == pytest.approx(1.0, rel=1e-12)
    assert np.sum(rescaled >= 1.0 - 1e-12) <= 2


def test_max_binding_count():
    assert max_binding_count(_spec([0, 0, 0], [1, 1, 1], 1.5)) == 1
    assert max_binding_count(_spec([0, 0, 0], [1, 1, 1], 2.5)) == 2


def test_cap_shift_projection_lands_on_bound():
    result = project_redistribute(np.array([1.0, 9.0]), _spec([0, 0], [1, 1], 1.5), cap_shift=True)
    assert result.w == pytest.approx([0.5, 1.0])
    assert result.binding_mask[1]


def test_binding_cap_shift_rejects_degenerate_denominator():
    # second-largest cap 1.0 times three agents equals the target sum
    spec = _spec([-5, -5, -5], [2, 1, 1], 3.0)
    assert max_binding_count(spec) == 2
    with pytest.raises(ValueError, match="undefined"):
        binding_cap_shift(np.array([0.5, 1.0, 1.5]), spec)
