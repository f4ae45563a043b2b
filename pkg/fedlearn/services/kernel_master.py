"""
Coordinator side of the federated kernel classifier.

Block coordinate descent over party weight blocks: each iteration one party,
chosen round-robin, re-solves its ridge sub-problem against the aggregate
residual; the others answer "unchanged" and the master reuses their cached
contribution.
"""

import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np

from fedlearn.api.schemas import KernelConfig
from fedlearn.core.config import Phase, settings
from fedlearn.core.phases import DONE, Pipeline, Round, TrainingReport, exchange_round, run_pipeline
from fedlearn.core.transport import Transport
from fedlearn.core.wire import BigIntVec, Message
from fedlearn.models.kernel import KernelModel
from fedlearn.services.kernel_solver import KernelError, master_aggregate, objective, round_robin

logger = logging.getLogger(__name__)


class KernelTrainingPipeline(Pipeline):

    def __init__(self, config: KernelConfig, parties: Sequence[str], coordinator: Optional[str] = None):
        if not parties:
            raise KernelError("kernel training needs at least one party")
        self.config = config
        self.parties = list(parties)
        self.coordinator = coordinator or settings.COORDINATOR_NAME
        self.n: Optional[int] = None
        self.u: List[np.ndarray] = []
        self.v: Optional[np.ndarray] = None
        self.t = 0
        self.cp: Optional[int] = None
        self.history: List[np.ndarray] = []
        self.objectives: List[float] = []
        self.deltas: List[float] = []
        self.dims: List[int] = []

    @property
    def P(self) -> int:
        return len(self.parties)

    def _request(self, index: int, phase_id: int, body: dict) -> Message:
        return Message.request(self.coordinator, self.parties[index], phase_id, body)

    def setup_body(self, index: int) -> dict:
        c = self.config
        return {
            "index": index,
            "D": c.D,
            "gamma": c.gamma,
            "seed": c.seed,
            "normalization": c.normalization,
            "lambda": c.lam,
        }

    def init(self) -> List[Message]:
        return [self._request(k, Phase.KERNEL_SETUP, self.setup_body(k)) for k in range(self.P)]

    def _initial(self, responses: List[Message]) -> None:
        sizes = {int(r.body["n"]) for r in responses}
        if len(sizes) != 1:
            raise KernelError(f"parties disagree on the number of rows: {sorted(sizes)}")
        self.n = sizes.pop()
        self.u = [np.asarray(r.body["u"], dtype=np.float64) for r in responses]

    def _update(self, responses: List[Message]) -> None:
        for k, response in enumerate(responses):
            selected = k == self.cp - 1
            if selected:
                if "u" not in response.body:
                    raise KernelError(f"selected party {self.parties[k]!r} sent no contribution")
                self.u[k] = np.asarray(response.body["u"], dtype=np.float64)
            elif "unchanged" not in response.body:
                raise KernelError(f"party {self.parties[k]!r} changed its contribution out of turn")

    def _converged(self) -> bool:
        tail = self.deltas[-self.P:]
        return len(tail) == self.P and max(tail) < self.config.tol

    def step(self, responses: List[Message]) -> Round:
        if self.v is None:
            self._initial(responses)
        else:
            self._update(responses)
        v = master_aggregate(self.u)
        if self.v is not None:
            self.deltas.append(float(np.max(np.abs(v - self.v))) if len(v) else 0.0)
        self.v = v
        self.history.append(v)
        self.objectives.append(objective(v) if len(v) else 0.0)
        logger.info("kernel iteration %d: objective %.6g", self.t, self.objectives[-1])

        if self.t >= self.config.t_max:
            return DONE
        if self._converged():
            logger.info("kernel converged after %d iterations", self.t)
            return DONE
        self.t += 1
        self.cp = round_robin(self.t, self.P)
        return [
            self._request(k, Phase.KERNEL_UPDATE, {"v": v, "selected": int(k == self.cp - 1)})
            for k in range(self.P)
        ]

    def finish(self) -> List[Message]:
        return [self._request(k, Phase.KERNEL_FINALIZE, {}) for k in range(self.P)]

    def after_finish(self, responses: List[Message]) -> None:
        self.dims = [int(r.body.get("dims", 0)) for r in responses]

    def model(self) -> KernelModel:
        c = self.config
        return KernelModel(
            parties=list(self.parties),
            D=c.D,
            gamma=c.gamma,
            seed=c.seed,
            normalization=c.normalization,
            lam=c.lam,
            iterations=self.t,
            residual_history=list(self.history),
        )


def train_kernel(
    config: KernelConfig,
    transport: Transport,
    parties: Sequence[str],
    coordinator: Optional[str] = None,
) -> Tuple[KernelModel, TrainingReport]:
    pipeline = KernelTrainingPipeline(config, parties, coordinator)
    report = run_pipeline(pipeline, transport)
    logger.info("kernel training finished: %d iterations", pipeline.t)
    return pipeline.model(), report


def predict_kernel(
    model: KernelModel,
    transport: Transport,
    sample_ids: Sequence[int],
    coordinator: Optional[str] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Labels in {-1,+1} (score 0 maps to +1) and the summed raw scores."""
    ids = BigIntVec(sample_ids)
    if not ids:
        return np.zeros(0), np.zeros(0)
    coordinator = coordinator or settings.COORDINATOR_NAME
    requests = [
        Message.request(coordinator, name, Phase.KERNEL_PREDICT, {
            "ids": ids,
            "index": k,
            "D": model.D,
            "gamma": model.gamma,
            "seed": model.seed,
            "normalization": model.normalization,
        })
        for k, name in enumerate(model.parties)
    ]
    responses = exchange_round(transport, requests)
    scores = np.zeros(len(ids))
    for response in responses:
        partial = np.asarray(response.body["score"], dtype=np.float64)
        if len(partial) != len(ids):
            raise KernelError(f"party {response.sender!r} scored {len(partial)} of {len(ids)} samples")
        scores += partial
    labels = np.where(scores >= 0.0, 1.0, -1.0)
    return labels, scores
