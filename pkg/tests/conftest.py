import numpy as np
import pytest

from fedlearn.core.transport import LoopbackTransport
from fedlearn.services.data_service import PartyTable, as_zero_one, gen_blobs, vertical_split
from fedlearn.services.party_service import PartyService


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def split_blobs():
    """Blobs split column-wise over parties; labels sit with the first party."""
    def build(n=200, d=6, parties=3, separation=4.0, seed=7, label_kind="pm1"):
        table = gen_blobs(n, d, separation, seed, label_kind)
        return vertical_split(table, parties, seed)
    return build


@pytest.fixture
def federation(tmp_path):
    """Serve the given tables as parties on one loopback transport."""
    def build(tables, active=0, quantiles=None, model_dirs=True, secret_key_path=None):
        transport = LoopbackTransport(timeout_s=60)
        services = []
        for k, table in enumerate(tables):
            service = PartyService(
                name=table.name,
                table=table,
                is_active=k == active,
                model_dir=tmp_path / "models" / table.name if model_dirs else None,
                quantiles=quantiles[k] if quantiles else None,
                secret_key_path=secret_key_path,
            )
            service.serve(transport)
            services.append(service)
        return transport, services
    return build


@pytest.fixture
def forest_tables(split_blobs):
    """150 samples, 6 features over 3 parties, {0,1} labels."""
    return split_blobs(n=150, d=6, parties=3, separation=2.0, seed=11, label_kind="zero_one")


def joined_labels(tables) -> np.ndarray:
    for table in tables:
        if table.labels is not None:
            return as_zero_one(table.labels)
    raise AssertionError("no table carries labels")


@pytest.fixture
def labels_of():
    return joined_labels


@pytest.fixture
def toy_table():
    return PartyTable(
        "toy",
        ids=[1, 2, 3, 4],
        features=np.array([[1.0], [2.0], [3.0], [4.0]]),
        feature_names=["x0"],
        labels=np.array([0.0, 1.0, 0.0, 1.0]),
    )
