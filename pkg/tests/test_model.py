import json

import numpy as np
import pytest

from adapted_ot.model import (ConfigError, DiscretePathMeasure,
                              ExtrapolationError, MarkovLattice,
                              NotMarkovianError, SamplePath, TimeGrid, affine,
                              constant, eval_coefficient, format_coefficient,
                              growth_bounds, ou, parse_coefficient,
                              sign_switch, table)


def make_prefix(n_steps, values):
    return SamplePath(grid=TimeGrid(n_steps), values=np.asarray(values))


def test_eval_constant_any_state():
    spec = constant(1.5)
    prefix = make_prefix(4, [0.0, 3.0, -2.0, 0.5, 0.1])
    assert eval_coefficient(spec, 0.5, prefix) == 1.5


def test_eval_ou_reads_current_state():
    spec = ou(1.0)
    prefix = make_prefix(2, [0.0, 2.0, 0.0])
    assert eval_coefficient(spec, 0.5, prefix) == -2.0


def test_eval_sign_switch_after_switch_time():
    spec = sign_switch(5.0, 0.1)
    prefix = make_prefix(10, [0.0, -0.3] + [0.0] * 9)
    assert eval_coefficient(spec, 0.2, prefix) == -5.0
    assert eval_coefficient(spec, 0.1, prefix) == 0.0


def test_sign_switch_is_not_markovian():
    spec = sign_switch(5.0, 0.1)
    with pytest.raises(NotMarkovianError):
        spec.evaluate(1.0)
    with pytest.raises(NotMarkovianError):
        growth_bounds(spec)


def test_table_refuses_extrapolation():
    spec = table([0.0, 1.0], [0.0, 2.0])
    with pytest.raises(ExtrapolationError):
        spec.evaluate(1.5)


def test_diffusion_must_be_nonnegative():
    spec = affine(0.0, 1.0, role="diffusion")
    with pytest.raises(ConfigError):
        spec.evaluate(-1.0)


def test_growth_bounds_examples():
    assert growth_bounds(affine(0.0, 2.0)).lipschitz == 2.0
    gb = growth_bounds(constant(3.0))
    assert gb.lipschitz == 0.0 and gb.linear_growth_K >= 3.0
    assert growth_bounds(table([0.0, 1.0], [0.0, 2.0])).lipschitz == 2.0


def test_growth_bounds_affine_is_exact():
    rng = np.random.default_rng(3)
    spec = affine(0.7, -1.3)
    lip = growth_bounds(spec).lipschitz
    x, y = rng.normal(size=(2, 500)) * 10
    assert np.all(np.abs(spec.evaluate(x) - spec.evaluate(y))
                  <= lip * np.abs(x - y) + 1e-12)
    k = growth_bounds(spec).linear_growth_K
    assert np.all(np.abs(spec.evaluate(x)) <= k * (1 + np.abs(x)) + 1e-12)


def test_table_knots_must_increase():
    with pytest.raises(ConfigError):
        table([0.0, 0.0, 1.0], [1.0, 2.0, 3.0])


def test_coefficient_text_roundtrip():
    specs = [constant(1.5), affine(0.25, -2.0), ou(0.7),
             table([-1.0, 0.5, 2.0], [3.0, 0.0, 1.0], role="diffusion"),
             sign_switch(5.0, 0.1)]
    for spec in specs:
        assert parse_coefficient(format_coefficient(spec)) == spec


def test_parse_coefficient_errors():
    with pytest.raises(ConfigError):
        parse_coefficient("value=1.5")
    with pytest.raises(ConfigError):
        parse_coefficient("kind=ou")
    with pytest.raises(ConfigError):
        parse_coefficient("kind=warp factor=9")


def test_time_grid():
    grid = TimeGrid(4)
    assert grid.h * grid.n_steps == 1.0
    assert np.all(np.diff(grid.times()) > 0)
    assert grid.index_of(0.75) == 3
    with pytest.raises(ConfigError):
        grid.index_of(0.1)
    with pytest.raises(ConfigError):
        TimeGrid(0)


def test_sample_path_validation():
    with pytest.raises(ConfigError):
        SamplePath(grid=TimeGrid(2), values=np.array([0.0, 1.0]))
    with pytest.raises(ConfigError):
        SamplePath(grid=TimeGrid(1), values=np.array([0.0, np.inf]))


def test_path_measure_validation_and_json():
    measure = DiscretePathMeasure(paths=[[0.5, 1.0], [-0.5, -1.0]],
                                  weights=[0.5, 0.5])
    again = DiscretePathMeasure.from_json(measure.to_json())
    assert np.array_equal(again.paths, measure.paths)
    assert np.array_equal(again.weights, measure.weights)
    with pytest.raises(ConfigError):
        DiscretePathMeasure(paths=[[0.0], [1.0]], weights=[0.6, 0.5])
    with pytest.raises(ConfigError):
        DiscretePathMeasure(paths=[[0.0], [1.0]], weights=[1.1, -0.1])


def test_lattice_validation_and_json():
    lattice = MarkovLattice(
        initial_value=0.0,
        supports=(np.array([0.0]), np.array([-1.0, 1.0])),
        transitions=(np.array([[0.5, 0.5]]),))
    again = MarkovLattice.from_json(lattice.to_json())
    assert np.array_equal(again.supports[1], lattice.supports[1])
    marg = lattice.stage_marginals()
    assert np.allclose(marg[1], [0.5, 0.5])
    with pytest.raises(ConfigError):
        MarkovLattice(initial_value=0.0,
                      supports=(np.array([0.0]), np.array([1.0, -1.0])),
                      transitions=(np.array([[0.5, 0.5]]),))
    with pytest.raises(ConfigError):
        MarkovLattice(initial_value=0.0,
                      supports=(np.array([0.0]), np.array([-1.0, 1.0])),
                      transitions=(np.array([[0.6, 0.5]]),))


def test_lattice_json_is_plain_data():
    lattice = MarkovLattice(
        initial_value=0.5,
        supports=(np.array([0.5]), np.array([0.0, 1.0])),
        transitions=(np.array([[0.25, 0.75]]),))
    data = json.loads(lattice.to_json())
    assert data["initial_value"] == 0.5
    assert data["stages"][0]["support"] == [0.0, 1.0]
