"""
Transcript audits for both learners: what each party puts on the wire.
"""

import re

import numpy as np
import pytest

from fedlearn.api.schemas import ForestConfig, KernelConfig
from fedlearn.core.config import Phase
from fedlearn.core.crypto import keygen
from fedlearn.core.seeding import derive_seed
from fedlearn.core.transport import LoopbackTransport
from fedlearn.core.wire import BigIntVec
from fedlearn.services.data_service import as_pm1, as_zero_one
from fedlearn.services.forest_master import predict_forest, train_forest
from fedlearn.services.kernel_master import predict_kernel, train_kernel
from fedlearn.services.party_service import PartyService

PASSIVE_KEYS = {"ready", "exponent", "record", "left", "right", "records", "directions"}
STATS_KEY = re.compile(r"f\d+\.(bins|counts|sums)")
ACTIVE_SETUP_KEYS = {"n_key", "key_bits", "ids", "enc_y", "exponent"}
PASSIVE_SETUP_KEYS = {"index", "seed", "quantiles", "max_features", "min_leaf", "epsilon", "subsample",
                      "n_key", "enc_y", "exponent"}


class RecordingTransport(LoopbackTransport):

    def __init__(self, timeout_s=None):
        super().__init__(timeout_s)
        self.log = []

    def send(self, request):
        response = super().send(request)
        self.log.append((request, response))
        return response


def _floats(value):
    if isinstance(value, (BigIntVec, bytes, str, int)):
        return np.zeros(0)
    return np.atleast_1d(np.asarray(value, dtype=np.float64)).ravel()


@pytest.fixture
def audited(forest_tables, tmp_path):
    config = ForestConfig(
        n_trees=2, max_depth=3, min_leaf=3, quantiles=8, subsample=0.9,
        key_bits=64, allow_insecure_keys=True, crypto_seed=2, seed=9,
    )
    transport = RecordingTransport(timeout_s=60)
    for k, table in enumerate(forest_tables):
        PartyService(table.name, table, is_active=k == 0, model_dir=tmp_path / table.name).serve(transport)
    names = [t.name for t in forest_tables]
    forest, _ = train_forest(config, transport, names, active=0)
    training = list(transport.log)
    transport.log.clear()
    predict_forest(forest, transport, forest_tables[0].ids)
    return forest_tables, training, list(transport.log)


def _messages(log):
    for request, response in log:
        yield request
        yield response


def test_no_feature_value_leaves_its_party(audited):
    tables, training, prediction = audited
    raw = np.concatenate([t.features.ravel() for t in tables])
    for message in _messages(training + prediction):
        for key, value in message.body.items():
            leaked = np.isin(_floats(value), raw)
            assert not leaked.any(), f"{key!r} in phase {message.phase_id} carries a feature value"


def test_labels_never_reach_passive_parties(audited):
    tables, training, prediction = audited
    active = tables[0].name
    n = tables[0].n_rows
    conventions = [as_zero_one(tables[0].labels), as_pm1(tables[0].labels)]
    for request, response in training + prediction:
        if active in (request.receiver, response.sender):
            continue
        for message in (request, response):
            for key, value in message.body.items():
                floats = _floats(value)
                if len(floats) == n:
                    assert not any(np.array_equal(floats, y) for y in conventions), key


def test_passive_parties_answer_with_statistics_only(audited):
    tables, training, prediction = audited
    active = tables[0].name
    for request, response in training + prediction:
        if response.sender == active:
            if request.phase_id == Phase.RF_SETUP:
                assert set(response.body) <= ACTIVE_SETUP_KEYS
            continue
        for key in response.body:
            assert key in PASSIVE_KEYS or STATS_KEY.fullmatch(key), key


def test_coordinator_sees_no_thresholds(audited):
    tables, training, _ = audited
    for request, response in training:
        if request.phase_id == Phase.RF_SPLIT:
            assert set(response.body) == {"record", "left", "right"}
            assert isinstance(response.body["record"], int)


def test_passive_setup_carries_public_key_material_only(audited):
    tables, training, _ = audited
    active = tables[0].name
    setups = [(req, resp) for req, resp in training if req.phase_id == Phase.RF_SETUP]
    (keys,) = [resp.body for req, resp in setups if req.receiver == active]
    (n_key,) = keys["n_key"]
    assert keygen(64, seed=derive_seed(2, "keygen"), allow_insecure=True).public.n == n_key

    passive = [req.body for req, _ in setups if req.receiver != active]
    assert len(passive) == len(tables) - 1
    for body in passive:
        assert set(body) == PASSIVE_SETUP_KEYS
        assert keygen(64, seed=derive_seed(body["seed"], "keygen"), allow_insecure=True).public.n != n_key


# --- kernel ----------------------------------------------------------------

@pytest.fixture
def audited_kernel(split_blobs, tmp_path):
    tables = split_blobs(n=200, d=6, parties=3, seed=13)
    transport = RecordingTransport(timeout_s=60)
    for k, table in enumerate(tables):
        PartyService(table.name, table, is_active=k == 0, model_dir=tmp_path / table.name).serve(transport)
    model, _ = train_kernel(KernelConfig(D=32, t_max=10, tol=0.0, seed=6), transport, [t.name for t in tables])
    predict_kernel(model, transport, tables[0].ids)
    return tables, transport.log


def test_kernel_passive_responses_carry_no_labels_or_features(audited_kernel):
    tables, log = audited_kernel
    active = tables[0].name
    n = tables[0].n_rows
    conventions = [as_zero_one(tables[0].labels), as_pm1(tables[0].labels)]
    raw = np.concatenate([t.features.ravel() for t in tables])
    checked = set()
    for request, response in log:
        if response.sender == active:
            continue
        for key, value in response.body.items():
            floats = _floats(value)
            if len(floats) == n:
                assert not any(np.array_equal(floats, y) for y in conventions), key
            assert not np.isin(floats, raw).any(), f"{key!r} in phase {request.phase_id} carries a feature value"
            checked.add((request.phase_id, key))
    assert {(Phase.KERNEL_SETUP, "u"), (Phase.KERNEL_UPDATE, "u"), (Phase.KERNEL_PREDICT, "score")} <= checked
