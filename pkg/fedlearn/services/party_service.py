import logging
import threading
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from fedlearn.api import control, forest, kernel
from fedlearn.api.schemas import RunConfig
from fedlearn.core.phases import PhaseRegistry
from fedlearn.core.transport import Transport
from fedlearn.core.wire import Message
from fedlearn.services.data_service import DataError, PartyTable, as_pm1, as_zero_one, attach_labels, load_csv
from fedlearn.services.forest_party import ForestParty
from fedlearn.services.kernel_party import KernelParty

logger = logging.getLogger(__name__)


class PartyService:
    """One party: its table, algorithm state and the phase registry serving them."""

    def __init__(
        self,
        name: str,
        table: PartyTable,
        is_active: bool,
        model_dir: Optional[Path] = None,
        quantiles: Optional[int] = None,
        secret_key_path: Optional[Path] = None,
    ):
        if is_active and table.labels is None:
            raise DataError(f"active party {name} has no labels")
        self.name = name
        self.table = table
        self.is_active = is_active
        self.kernel = KernelParty(table, is_active, model_dir)
        self.forest = ForestParty(table, is_active, model_dir, quantiles, secret_key_path if is_active else None)
        self.stop = threading.Event()
        self.registry = (
            PhaseRegistry()
            .include_router(kernel.router, self)
            .include_router(forest.router, self)
            .include_router(control.router, self)
        )

    def handle(self, request: Message) -> Message:
        return self.registry.dispatch(request)

    def serve(self, transport: Transport) -> None:
        transport.serve(self.name, self.handle, self.stop)

    def evaluate(self, ids, predicted, algorithm: str) -> Tuple[float, int]:
        if not self.is_active:
            raise DataError(f"{self.name} holds no labels to evaluate against")
        predicted = np.asarray(predicted, dtype=np.float64)
        rows = self.table.row_index(ids)
        if len(rows) != len(predicted):
            raise DataError(f"{len(predicted)} predictions for {len(rows)} samples")
        if algorithm == "kernel":
            truth = as_pm1(self.table.labels)
        elif algorithm == "forest":
            truth = as_zero_one(self.table.labels)
        else:
            raise DataError(f"unknown algorithm {algorithm!r}")
        if len(rows) == 0:
            return float("nan"), 0
        return float(np.mean(truth[rows] == predicted)), len(rows)


def load_party_table(config: RunConfig, name: str) -> PartyTable:
    party = config.party(name)
    table = load_csv(party.data_path, has_labels=party.is_active and party.label_path is None, name=name)
    if party.label_path is not None:
        table = attach_labels(table, party.label_path)
    return table


def load_party(config: RunConfig, name: str) -> PartyService:
    party = config.party(name)
    return PartyService(
        name=name,
        table=load_party_table(config, name),
        is_active=party.is_active,
        model_dir=config.model_dir_for(party),
        quantiles=party.quantiles,
        secret_key_path=config.forest.secret_key_path,
    )
