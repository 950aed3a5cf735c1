import pytest
from hypothesis import given, strategies as st

from dynaroute.link_metrics import (
    SD_CAP,
    MetricWeights,
    PathCandidate,
    aggregate_hop_values,
    direction_progress,
    direction_ratio,
    hop_value,
    neighbor_transmit_count,
    node_weight,
    path_value,
    relay_reliability,
    staying_time,
    vehicle_status,
    velocity_variance,
)


def test_vehicle_status_boundary_inclusive():
    assert vehicle_status(0, 5) == 1
    assert vehicle_status(5, 5) == 1
    assert vehicle_status(6, 5) == 0


def test_neighbor_transmit_count():
    assert neighbor_transmit_count([]) == 0
    assert neighbor_transmit_count([1, 1, 0]) == 2
    assert neighbor_transmit_count([1] * 7) == 7


def test_relay_reliability():
    assert relay_reliability(0, 0) == 1.0
    assert relay_reliability(3, 4) == 0.75
    assert relay_reliability(9, 9) == 1.0
    with pytest.raises(ValueError):
        relay_reliability(5, 4)


def test_staying_time():
    assert staying_time(300.0, 100.0, 20.0, 10.0) == pytest.approx(20.0)
    assert staying_time(300.0, 100.0, 15.0, 15.0) == SD_CAP
    assert staying_time(300.0, 300.0, 20.0, 10.0) == 0.0
    with pytest.raises(ValueError):
        staying_time(300.0, 301.0, 20.0, 10.0)


def test_direction_ratio_geometry():
    s, z = (0.0, 0.0), (100.0, 0.0)
    assert direction_ratio(z, s, z) == 0.0
    assert direction_ratio(s, s, z) == 1.0
    assert direction_ratio((50.0, 0.0), s, z) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        direction_ratio((1, 1), s, s)


def test_velocity_variance():
    assert velocity_variance([10, 10, 10]) == 0.0
    assert velocity_variance([8, 12]) == pytest.approx(2.0)
    assert velocity_variance([17.3]) == 0.0


def test_node_weight():
    w = MetricWeights(0.4, 0.3, 0.3)
    assert node_weight(1, 2, 1.0, w, can_transmit=True) == pytest.approx(1.3)
    assert node_weight(1, 2, 1.0, w, can_transmit=False) == 1.0
    assert node_weight(1, 2, 1.0, MetricWeights(0, 0, 0), can_transmit=True) == 0.0


def test_hop_value_direct_formula():
    # direction factor 0.5 both as raw ratio and progress score
    assert hop_value(20.0, 1.3, 0.5, 2.0, 0.9) == pytest.approx(5.85)
    assert hop_value(20.0, 1.3, 0.5, 2.0, 0.0) == 0.0


def test_path_value_annihilator_and_product():
    metrics = [(20.0, 0.5), (20.0, 0.5)]
    weights = [1.3, 1.3]
    assert path_value(metrics, weights, 2.0, [0.9, 0.0]) == 0.0
    total = path_value(metrics, weights, 2.0, [0.9, 0.9])
    assert total == pytest.approx(5.85 * 5.85)


def test_path_value_sigma_floor():
    one = path_value([(10.0, 0.0)], [1.0], 0.0, [1.0])
    assert one == pytest.approx(10.0 / 1e-3)


@given(
    sd=st.floats(min_value=0.0, max_value=SD_CAP),
    p=st.floats(min_value=0.0, max_value=1.0),
    bump=st.floats(min_value=0.01, max_value=0.3),
    sigma=st.floats(min_value=0.01, max_value=10.0),
)
def test_path_value_monotonicity(sd, p, bump, sigma):
    base = path_value([(sd, 0.5)], [1.0], sigma, [p])
    assert path_value([(sd, 0.5)], [1.0], sigma, [min(1.0, p + bump)]) >= base
    assert path_value([(sd + bump, 0.5)], [1.0], sigma, [p]) >= base
    assert path_value([(sd, 0.5)], [1.0], sigma + bump, [p]) <= base


@given(
    values=st.lists(st.floats(min_value=0.0, max_value=50.0), min_size=2, max_size=6),
)
def test_removing_sub_unit_hop_never_decreases_product(values):
    total = aggregate_hop_values(values)
    for i, v in enumerate(values):
        if v < 1.0:
            reduced = aggregate_hop_values(values[:i] + values[i + 1 :])
            assert reduced >= total - 1e-12


def test_direction_progress_clamps():
    assert direction_progress(0.0) == 1.0
    assert direction_progress(1.0) == 0.0
    assert direction_progress(1.7) == 0.0
    assert direction_progress(-0.2) == 1.0


def test_path_candidate_validation():
    with pytest.raises(ValueError):
        PathCandidate(hops=(1,), per_hop=(), node_weights=(), sigma_v=0.0, path_value=0.0)
    with pytest.raises(ValueError):
        PathCandidate(
            hops=(1, 2, 1), per_hop=((1.0, 0.5, 0.9),) * 2,
            node_weights=(1.0, 1.0), sigma_v=0.0, path_value=1.0,
        )
    cand = PathCandidate(
        hops=(1, 2), per_hop=((10.0, 0.5, 0.8),), node_weights=(1.0,),
        sigma_v=0.5, path_value=8.0,
    )
    assert cand.delivery_prob == pytest.approx(0.8)
