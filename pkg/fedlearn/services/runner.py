"""
Process roles: a party serving its phases, the coordinator driving training,
the all-in-one loopback simulation, and prediction with a trained model.
"""

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from fedlearn.api.schemas import RunConfig
from fedlearn.core.config import Phase, settings
from fedlearn.core.phases import TrainingReport, exchange_round
from fedlearn.core.transport import (
    BroadcastError,
    ConnectionFailed,
    LoopbackTransport,
    TcpTransport,
    Transport,
    broadcast,
)
from fedlearn.core.wire import BigIntVec, Message
from fedlearn.models.kernel import KernelModel
from fedlearn.services.data_service import AlignmentError, check_id_alignment
from fedlearn.services.export_service import (
    Model,
    build_metrics,
    read_manifest,
    write_manifest,
    write_metrics,
    write_predictions,
)
from fedlearn.services.forest_master import predict_forest, train_forest
from fedlearn.services.kernel_master import predict_kernel, train_kernel
from fedlearn.services.party_service import PartyService, load_party

logger = logging.getLogger(__name__)


@dataclass
class RunResult:
    model: Model
    report: TrainingReport
    ids: np.ndarray
    train_accuracy: Optional[float]
    metrics: Dict = field(default_factory=dict)
    model_path: Optional[Path] = None
    metrics_path: Optional[Path] = None


def make_transport(config: RunConfig) -> Transport:
    timeout = config.timeout_s or settings.TRANSPORT_TIMEOUT_S
    if config.transport == "tcp":
        return TcpTransport({p.name: p.endpoint for p in config.parties}, timeout_s=timeout)
    return LoopbackTransport(timeout_s=timeout)


def _request(name: str, phase_id: int, body: Optional[dict] = None) -> Message:
    return Message.request(settings.COORDINATOR_NAME, name, phase_id, body)


def describe_parties(transport: Transport, config: RunConfig, wait_s: float = 0.0) -> np.ndarray:
    """Aligned training ids; waits up to `wait_s` for parties to come up."""
    requests = [_request(name, Phase.DESCRIBE) for name in config.party_names]
    deadline = time.monotonic() + wait_s
    while True:
        try:
            responses = exchange_round(transport, requests)
            break
        except BroadcastError as e:
            if not isinstance(e.cause, ConnectionFailed) or time.monotonic() >= deadline:
                raise
            time.sleep(0.2)

    for party, response in zip(config.parties, responses):
        if bool(response.body["active"]) != party.is_active:
            raise AlignmentError(f"party {party.name!r} disagrees with the config about holding labels")
    report = check_id_alignment([(r.sender, r.body["ids"]) for r in responses])
    if not report.ok:
        raise AlignmentError(f"sample ids are not aligned: {report.detail}")
    logger.info(
        "parties aligned on %d samples; features per party: %s",
        len(responses[0].body["ids"]),
        ", ".join(f"{r.sender}={int(r.body['features'])}" for r in responses),
    )
    return np.asarray([int(i) for i in responses[0].body["ids"]], dtype=np.uint64)


def evaluate_accuracy(transport: Transport, config: RunConfig, ids, predicted, algorithm: str) -> float:
    active = config.parties[config.active_index].name
    (response,) = exchange_round(transport, [_request(active, Phase.EVALUATE, {
        "ids": BigIntVec(ids),
        "predicted": np.asarray(predicted, dtype=np.float64),
        "algorithm": algorithm,
    })])
    return float(response.body["accuracy"])


def train(config: RunConfig, transport: Transport) -> Tuple[Model, TrainingReport]:
    if config.algorithm == "kernel":
        return train_kernel(config.kernel, transport, config.party_names)
    return train_forest(config.forest, transport, config.party_names, config.active_index)


def predict(model: Model, transport: Transport, ids) -> Tuple[np.ndarray, np.ndarray]:
    if isinstance(model, KernelModel):
        return predict_kernel(model, transport, ids)
    return predict_forest(model, transport, ids)


def algorithm_of(model: Model) -> str:
    return "kernel" if isinstance(model, KernelModel) else "forest"


def shutdown_parties(transport: Transport, names: Sequence[str]) -> None:
    """Best effort: a party that is already gone is only logged."""
    for name in names:
        try:
            broadcast(transport, [_request(name, Phase.SHUTDOWN)])
        except Exception as e:
            logger.warning("could not shut down %s: %s", name, e)


def run_coordinator(config: RunConfig, transport: Transport, wait_s: float = 0.0) -> RunResult:
    ids = describe_parties(transport, config, wait_s)
    model, report = train(config, transport)
    labels, _ = predict(model, transport, ids)
    accuracy = evaluate_accuracy(transport, config, ids, labels, algorithm_of(model)) if len(ids) else None
    if accuracy is not None and not math.isnan(accuracy):
        logger.info("training accuracy %.4f over %d samples", accuracy, len(ids))

    metrics = build_metrics(model, report, accuracy)
    result = RunResult(model, report, ids, accuracy, metrics)
    result.model_path = write_manifest(config.output_dir, model)
    result.metrics_path = write_metrics(config.output_dir, metrics)
    logger.info("model written to %s, metrics to %s", result.model_path, result.metrics_path)
    return result


def start_loopback_parties(config: RunConfig, transport: LoopbackTransport) -> List[PartyService]:
    services = [load_party(config, name) for name in config.party_names]
    for service in services:
        service.serve(transport)
    return services


def simulate(config: RunConfig) -> RunResult:
    if config.transport != "loopback":
        logger.info("simulate runs in-process; ignoring transport %r", config.transport)
    transport = LoopbackTransport(timeout_s=config.timeout_s or settings.TRANSPORT_TIMEOUT_S)
    start_loopback_parties(config, transport)
    try:
        return run_coordinator(config, transport)
    finally:
        shutdown_parties(transport, config.party_names)


def coordinate(config: RunConfig, wait_s: float = 10.0) -> RunResult:
    transport = make_transport(config)
    try:
        return run_coordinator(config, transport, wait_s)
    finally:
        shutdown_parties(transport, config.party_names)


def run_party(config: RunConfig, name: str, transport: Optional[Transport] = None) -> PartyService:
    """Serve one party until a shutdown request (blocking over TCP)."""
    service = load_party(config, name)
    transport = transport or make_transport(config)
    logger.info("party %s up: %d rows, %d features", name, service.table.n_rows, service.table.n_features)
    service.serve(transport)
    return service


def predict_with_model(
    config: RunConfig,
    model_path,
    out_path,
    ids: Optional[Sequence[int]] = None,
    transport: Optional[Transport] = None,
) -> Tuple[Path, Optional[float]]:
    """Score `ids` (default: every aligned sample) and write id,score,label."""
    model = read_manifest(model_path)
    if list(model.parties) != config.party_names:
        raise AlignmentError(f"model was trained by {model.parties}, config lists {config.party_names}")
    if algorithm_of(model) != config.algorithm:
        raise AlignmentError(f"model is a {algorithm_of(model)} model but the config says {config.algorithm}")

    own_transport = transport is None
    if own_transport:
        transport = make_transport(config)
        if isinstance(transport, LoopbackTransport):
            start_loopback_parties(config, transport)
    try:
        if ids is None:
            ids = describe_parties(transport, config)
        ids = np.asarray([int(i) for i in ids], dtype=np.uint64)
        labels, scores = predict(model, transport, ids)
        accuracy = None
        if len(ids):
            accuracy = evaluate_accuracy(transport, config, ids, labels, algorithm_of(model))
    finally:
        if own_transport and isinstance(transport, LoopbackTransport):
            shutdown_parties(transport, config.party_names)
    path = write_predictions(out_path, ids, scores, labels)
    logger.info("%d predictions written to %s", len(ids), path)
    return path, accuracy
