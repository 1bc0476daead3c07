import math
import warnings

import numpy as np
import pytest
from numpy.testing import assert_allclose

from newteig.assemble import (assemble_forms, example2_coefficients,
                              laplace_coefficients, rayleigh_quotient)
from newteig.eigen_newton import ClusterGapWarning, coarse_solve
from newteig.mesh import build_hierarchy, unit_square_mesh
from newteig.multilevel import (MultilevelError, SolveOptions,
                                compare_with_direct, run_multilevel)

EXACT_FIRST = 2 * math.pi ** 2


@pytest.fixture(scope="module")
def laplace_run_n4():
    hier = build_hierarchy(unit_square_mesh(1 / 6), 4)
    return run_multilevel(hier, laplace_coefficients(), 1)


def test_single_level_equals_coarse_solve():
    coarse = unit_square_mesh(1 / 4)
    hier = build_hierarchy(coarse, 1)
    record = run_multilevel(hier, laplace_coefficients(), 2)
    forms = assemble_forms(coarse, laplace_coefficients())
    direct = coarse_solve(forms, 2)
    assert_allclose(record.levels[0].eigenvalues, direct.values, rtol=0, atol=0)
    assert len(record.levels) == 1


def test_laplace_first_eigenvalue_rates(laplace_run_n4):
    record = laplace_run_n4
    errors = [r.eigenvalue_errors[0] for r in record.levels]
    for k in range(3):
        assert 3.0 <= errors[k] / errors[k + 1] <= 5.0
    assert record.observed_orders[0] == pytest.approx(2.0, abs=0.2)


def test_laplace_eigenfunction_energy_rate(laplace_run_n4):
    record = laplace_run_n4
    energies = [r.energy_errors[0] for r in record.levels]
    assert all(e is not None for e in energies)
    assert record.energy_orders[0] == pytest.approx(1.0, abs=0.15)


def test_eigenvalues_non_increasing_across_levels(laplace_run_n4):
    values = [r.eigenvalues[0] for r in laplace_run_n4.levels]
    for k in range(1, len(values) - 1):
        assert values[k + 1] <= values[k] + 1e-9


def test_recorded_value_is_rayleigh_quotient_of_vector(laplace_run_n4):
    record = laplace_run_n4
    forms = record.aux["forms"]
    for k, pairs in enumerate(record.aux["per_level_pairs"]):
        rq = rayleigh_quotient(forms[k], pairs[0].vector)
        assert abs(rq - record.levels[k].eigenvalues[0]) <= 1e-10 * abs(rq)


def test_dimension_ratio_tends_to_four(laplace_run_n4):
    sizes = [r.n_free for r in laplace_run_n4.levels]
    assert all(b > a for a, b in zip(sizes, sizes[1:]))
    for k in range(1, len(sizes) - 1):
        assert 3.5 <= sizes[k + 1] / sizes[k] <= 4.5


def test_compare_with_direct_single_level():
    hier = build_hierarchy(unit_square_mesh(1 / 4), 1)
    comparison = compare_with_direct(hier, laplace_coefficients(), 1)
    assert comparison.value_diffs[0][0] == 0.0
    assert comparison.energy_diffs[0][0] == 0.0


def test_compare_with_direct_finest_level_closeness():
    hier = build_hierarchy(unit_square_mesh(1 / 6), 4)
    comparison = compare_with_direct(hier, laplace_coefficients(), 1)
    direct_err = abs(comparison.direct_values[-1][0] - EXACT_FIRST)
    assert comparison.value_diffs[-1][0] <= 0.05 * direct_err


def test_example2_richardson_reference_and_rates():
    hier = build_hierarchy(unit_square_mesh(1 / 6), 3)
    record = run_multilevel(hier, example2_coefficients(), 2)
    assert np.isfinite(record.reference_values).all()
    # first eigenvalue of this operator is near 23.8 (extrapolated)
    assert 20.0 <= record.reference_values[0] <= 28.0
    for order in record.observed_orders:
        assert order == pytest.approx(2.0, abs=0.4)


def test_custom_reference_values_override():
    hier = build_hierarchy(unit_square_mesh(1 / 4), 2)
    options = SolveOptions(reference_values=[EXACT_FIRST])
    record = run_multilevel(hier, laplace_coefficients(), 1, options)
    assert_allclose(record.reference_values, [EXACT_FIRST], rtol=0)


def test_errors_propagate_with_level_index():
    hier = build_hierarchy(unit_square_mesh(1 / 8), 2)
    options = SolveOptions(dense_cap=10)   # coarse solve cannot run
    with pytest.raises(MultilevelError) as info:
        run_multilevel(hier, laplace_coefficients(), 1, options)
    assert info.value.level == 0
    assert info.value.records == []


def test_unstructured_mesh_pipeline():
    # union-jack square: 5 vertices, 4 triangles, interior centre vertex
    from newteig.mesh import Mesh

    coarse = Mesh(vertices=[[0, 0], [1, 0], [1, 1], [0, 1], [0.5, 0.5]],
                  triangles=[[0, 1, 4], [1, 2, 4], [2, 3, 4], [3, 0, 4]],
                  boundary=[True, True, True, True, False])
    hier = build_hierarchy(coarse, 4)
    record = run_multilevel(hier, laplace_coefficients(), 1)
    errors = [r.eigenvalue_errors[0] for r in record.levels]
    assert record.observed_orders[0] == pytest.approx(2.0, abs=0.25)
    assert all(a > b for a, b in zip(errors, errors[1:]))


def test_multi_eigenvalue_run_records_all_columns():
    hier = build_hierarchy(unit_square_mesh(1 / 6), 2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ClusterGapWarning)
        record = run_multilevel(hier, laplace_coefficients(), 6)
    finest = record.levels[-1]
    assert finest.eigenvalues.shape == (6,)
    assert finest.eigenvalue_errors.shape == (6,)
    # energy errors only for the simple modes (2 pi^2 and 8 pi^2)
    present = [e is not None for e in finest.energy_errors]
    assert present == [True, False, False, True, False, False]
