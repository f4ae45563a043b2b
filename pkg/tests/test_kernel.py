import numpy as np
import pytest

from fedlearn.api.schemas import KernelConfig
from fedlearn.core.config import Phase
from fedlearn.core.phases import PipelineError, RemoteError, run_pipeline
from fedlearn.models.kernel import KernelModel, load_weights
from fedlearn.services.data_service import PartyTable, as_pm1
from fedlearn.services.kernel_master import KernelTrainingPipeline, predict_kernel, train_kernel
from fedlearn.services.kernel_party import build_map, transform
from fedlearn.services.kernel_solver import (
    KernelError,
    SingularSystem,
    block_coordinate_reference,
    local_solve,
    master_aggregate,
    round_robin,
)


def _phis(tables, config):
    return [
        transform(build_map(t.n_features, config.D, config.gamma, config.seed, k, config.normalization), t.features)
        for k, t in enumerate(tables)
    ]


def _names(tables):
    return [t.name for t in tables]


# --- numerics ---------------------------------------------------------------

def test_local_solve_examples():
    np.testing.assert_allclose(local_solve(np.eye(2), np.array([1.0, -2.0]), 0.0), [-1.0, 2.0])
    np.testing.assert_allclose(local_solve(np.eye(2), np.array([1.0, 0.0]), 1.0), [-0.5, 0.0])
    np.testing.assert_array_equal(local_solve(np.eye(3), np.zeros(3), 0.5), np.zeros(3))


def test_local_solve_errors():
    with pytest.raises(SingularSystem):
        local_solve(np.ones((3, 2)), np.ones(3), 0.0)
    with pytest.raises(KernelError):
        local_solve(np.eye(2), np.ones(3), 0.0)
    with pytest.raises(KernelError):
        local_solve(np.eye(2), np.ones(2), -1.0)
    with pytest.raises(KernelError):
        local_solve(np.array([[np.nan, 0.0], [0.0, 1.0]]), np.ones(2), 1.0)
    assert local_solve(np.zeros((4, 0)), np.ones(4), 0.0).shape == (0,)


def test_master_aggregate():
    np.testing.assert_array_equal(master_aggregate([np.array([0.5]), np.array([0.5]), np.array([-1.0])]), [0.0])
    np.testing.assert_array_equal(master_aggregate([np.zeros(2) - np.array([1.0, -1.0])]), [-1.0, 1.0])
    with pytest.raises(KernelError):
        master_aggregate([])
    with pytest.raises(KernelError):
        master_aggregate([np.zeros(2), np.zeros(3)])


def test_aggregate_matches_direct_formula(rng):
    Phis = [rng.standard_normal((20, 5)) for _ in range(3)]
    ws = [rng.standard_normal(5) for _ in range(3)]
    y = np.sign(rng.standard_normal(20))
    contributions = [Phis[0] @ ws[0] - y] + [Phi @ w for Phi, w in zip(Phis[1:], ws[1:])]
    direct = sum(Phi @ w for Phi, w in zip(Phis, ws)) - y
    np.testing.assert_allclose(master_aggregate(contributions), direct, atol=1e-12)


def test_round_robin():
    assert [round_robin(t, 3) for t in range(1, 8)] == [1, 2, 3, 1, 2, 3, 1]


# --- federated training -----------------------------------------------------

def test_single_party_matches_centralized_ridge(split_blobs, federation):
    (table,) = split_blobs(n=80, d=3, parties=1)
    transport, _ = federation([table])
    config = KernelConfig(D=32, t_max=1, tol=0.0, seed=4)
    model, _ = train_kernel(config, transport, _names([table]))
    (Phi,) = _phis([table], config)
    y = as_pm1(table.labels)
    w = np.linalg.solve(Phi.T @ Phi + config.lam * np.eye(Phi.shape[1]), Phi.T @ y)
    np.testing.assert_allclose(model.residual_history[1], Phi @ w - y, atol=1e-9)


def test_federated_matches_block_coordinate_reference(split_blobs, federation):
    tables = split_blobs(n=200, d=6, parties=3)
    assert [t.n_features for t in tables] == [2, 2, 2]
    transport, _ = federation(tables)
    config = KernelConfig(D=64, t_max=30, tol=0.0, seed=3)
    model, report = train_kernel(config, transport, _names(tables))

    assert model.iterations == 30
    assert report.loop_rounds == 30
    reference = block_coordinate_reference(_phis(tables, config), as_pm1(tables[0].labels), config.lam, 30)
    assert len(model.residual_history) == len(reference) == 31
    for v, ref in zip(model.residual_history, reference):
        assert np.max(np.abs(v - ref)) <= 1e-9


def test_plain_objective_descends_without_ridge(split_blobs, federation):
    tables = split_blobs(n=200, d=6, parties=3, seed=21)
    transport, _ = federation(tables)
    model, _ = train_kernel(KernelConfig(D=16, lam=0.0, t_max=30, tol=0.0, seed=8), transport, _names(tables))
    objectives = [float(v @ v) / len(v) for v in model.residual_history]
    assert np.all(np.diff(objectives) <= 1e-9)
    assert objectives[-1] < objectives[0]


def test_regularized_objective_descends(split_blobs):
    tables = split_blobs(n=120, d=6, parties=3, seed=5)
    config = KernelConfig(D=48, lam=0.1, seed=2)
    Phis = _phis(tables, config)
    y = as_pm1(tables[0].labels)
    weights = [np.zeros(Phi.shape[1]) for Phi in Phis]
    values = []
    for t in range(1, 25):
        p = round_robin(t, 3) - 1
        v = sum(Phi @ w for Phi, w in zip(Phis, weights)) - y
        values.append(float(v @ v + config.lam * sum(w @ w for w in weights)))
        weights[p] = local_solve(Phis[p], v - Phis[p] @ weights[p], config.lam)
    assert np.all(np.diff(values) <= 1e-9)


def test_zero_iterations(split_blobs, federation):
    tables = split_blobs(n=40, d=4, parties=2)
    transport, services = federation(tables)
    model, report = train_kernel(KernelConfig(D=8, t_max=0), transport, _names(tables))
    assert model.iterations == 0
    assert report.loop_rounds == 0
    np.testing.assert_array_equal(model.residual_history[0], -as_pm1(tables[0].labels))
    assert all(not s.kernel.state.w.any() for s in services)

    labels, scores = predict_kernel(model, transport, tables[0].ids)
    assert np.all(scores == 0.0)
    assert np.all(labels == 1.0)


def test_only_the_selected_party_updates(split_blobs, federation):
    tables = split_blobs(n=60, d=6, parties=3)
    transport, services = federation(tables)
    pipeline = KernelTrainingPipeline(KernelConfig(D=16, t_max=7, tol=0.0), _names(tables))
    report = run_pipeline(pipeline, transport)

    for exchange in report.loop_exchanges():
        selected = bool(exchange.request.body["selected"])
        assert exchange.request.phase_id == Phase.KERNEL_UPDATE
        assert ("u" in exchange.response.body) == selected
        assert ("unchanged" in exchange.response.body) == (not selected)
    for k, service in enumerate(services):
        state = service.kernel.state
        np.testing.assert_array_equal(pipeline.u[k], state.u)
        np.testing.assert_allclose(state.u, state.contribution(), atol=1e-12)


def test_sweep_tolerance_stops_early(split_blobs, federation):
    tables = split_blobs(n=40, d=6, parties=3)
    transport, _ = federation(tables)
    model, _ = train_kernel(KernelConfig(D=8, t_max=50, tol=1e9), transport, _names(tables))
    assert model.iterations == 3


def test_label_only_party_contributes_nothing(split_blobs, federation):
    passive = split_blobs(n=60, d=4, parties=2, seed=3)
    holder = PartyTable("holder", passive[0].ids, np.zeros((60, 0)), labels=passive[0].labels)
    passive[0].labels = None
    tables = [holder, *passive]
    transport, services = federation(tables)
    config = KernelConfig(D=16, t_max=9, tol=0.0, seed=1)
    model, _ = train_kernel(config, transport, _names(tables))

    assert services[0].kernel.state.Phi.shape == (60, 0)
    reference = block_coordinate_reference(_phis(tables, config), as_pm1(holder.labels), config.lam, 9)
    np.testing.assert_allclose(model.residual_history[-1], reference[-1], atol=1e-9)
    _, scores = predict_kernel(model, transport, holder.ids)
    assert np.isfinite(scores).all()


def test_learns_separable_blobs(split_blobs, federation):
    tables = split_blobs(n=400, d=6, parties=3, separation=4.0, seed=13)
    transport, _ = federation(tables)
    model, _ = train_kernel(KernelConfig(t_max=30), transport, _names(tables))
    labels, _ = predict_kernel(model, transport, tables[0].ids)
    assert np.mean(labels == as_pm1(tables[0].labels)) >= 0.95


# --- prediction -------------------------------------------------------------

def test_prediction_matches_centralized_scorer(split_blobs, federation):
    tables = split_blobs(n=100, d=4, parties=2, seed=17)
    transport, services = federation(tables)
    config = KernelConfig(D=32, t_max=6, seed=6)
    model, _ = train_kernel(config, transport, _names(tables))

    ids = tables[0].ids[::3]
    labels, scores = predict_kernel(model, transport, ids)
    rows = tables[0].row_index(ids)
    expected = sum(Phi[rows] @ s.kernel.state.w for Phi, s in zip(_phis(tables, config), services))
    np.testing.assert_allclose(scores, expected, atol=1e-9)
    np.testing.assert_array_equal(labels, np.where(expected >= 0, 1.0, -1.0))


def test_prediction_from_saved_weights(split_blobs, federation, tmp_path):
    tables = split_blobs(n=50, d=4, parties=2)
    transport, services = federation(tables)
    model, _ = train_kernel(KernelConfig(D=16, t_max=4), transport, _names(tables))
    _, trained_scores = predict_kernel(model, transport, tables[0].ids)

    for service in services:
        np.testing.assert_array_equal(load_weights(service.kernel.model_dir), service.kernel.state.w)

    restored = KernelModel.from_manifest(model.to_manifest())
    fresh_transport, _ = federation(tables)
    _, scores = predict_kernel(restored, fresh_transport, tables[0].ids)
    np.testing.assert_allclose(scores, trained_scores, atol=1e-12)


def test_prediction_edge_cases(split_blobs, federation):
    tables = split_blobs(n=30, d=2, parties=2)
    transport, _ = federation(tables)
    model, _ = train_kernel(KernelConfig(D=8, t_max=2), transport, _names(tables))
    labels, scores = predict_kernel(model, transport, [])
    assert labels.shape == scores.shape == (0,)
    with pytest.raises(RemoteError):
        predict_kernel(model, transport, [10_000])


def test_party_failure_names_the_round(split_blobs, federation):
    tables = split_blobs(n=30, d=4, parties=2)
    tables[1] = PartyTable(tables[1].name, tables[1].ids[:-1], tables[1].features[:-1])
    transport, _ = federation(tables)
    with pytest.raises(PipelineError) as info:
        train_kernel(KernelConfig(D=8, t_max=3), transport, _names(tables))
    assert info.value.stage == "loop"
    assert info.value.round_index == 1
    assert isinstance(info.value.cause, KernelError)


def test_manifest_round_trip():
    model = KernelModel(["a", "b"], D=64, gamma=0.5, seed=9, normalization="standard", lam=0.01, iterations=12)
    manifest = model.to_manifest()
    assert manifest["algorithm"] == "kernel"
    assert manifest["lambda"] == 0.01
    assert KernelModel.from_manifest(manifest) == model
