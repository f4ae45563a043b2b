"""
Phase dispatch and the generic training control pipeline.

Party side: a PhaseRouter collects handlers by phase_id the way an HTTP router
collects endpoints; a PhaseRegistry binds routers to one party's state and
dispatches incoming requests. Coordinator side: run_pipeline drives a Pipeline
through initialization, the training loop and wrap-up, one broadcast per round.
"""

import functools
import hashlib
import logging
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Union

from fedlearn.core.config import settings
from fedlearn.core.transport import Transport, broadcast
from fedlearn.core.wire import Message, encode_message

logger = logging.getLogger(__name__)

BodyHandler = Callable[..., Optional[Dict[str, Any]]]


class PhaseError(Exception):
    pass


class DuplicatePhase(PhaseError):
    pass


class RemoteError(PhaseError):

    def __init__(self, party: str, phase_id: int, detail: str):
        super().__init__(f"party {party!r} failed phase {phase_id}: {detail}")
        self.party = party
        self.phase_id = phase_id
        self.detail = detail


class PipelineError(PhaseError):

    def __init__(self, stage: str, round_index: int, cause: BaseException):
        super().__init__(f"{stage} aborted at round {round_index}: {cause}")
        self.stage = stage
        self.round_index = round_index
        self.cause = cause


class PhaseRouter:
    """Unbound phase handlers; each takes (context, request) and returns a body dict."""

    def __init__(self):
        self.routes: Dict[int, BodyHandler] = {}

    def phase(self, phase_id: int):
        def decorator(func: BodyHandler) -> BodyHandler:
            if phase_id in self.routes:
                raise DuplicatePhase(f"phase {phase_id} already routed to {self.routes[phase_id].__name__}")
            self.routes[phase_id] = func
            return func
        return decorator


class PhaseRegistry:

    def __init__(self):
        self.handlers: Dict[int, Callable[[Message], Optional[Dict[str, Any]]]] = {}

    def register(self, phase_id: int, handler: Callable[[Message], Optional[Dict[str, Any]]]) -> "PhaseRegistry":
        if phase_id in self.handlers:
            raise DuplicatePhase(f"phase {phase_id} is already registered")
        self.handlers[phase_id] = handler
        return self

    def include_router(self, router: PhaseRouter, context: Any) -> "PhaseRegistry":
        for phase_id, func in router.routes.items():
            self.register(phase_id, functools.partial(func, context))
        return self

    def dispatch(self, request: Message) -> Message:
        handler = self.handlers.get(request.phase_id)
        if handler is None:
            return request.reply({"error": f"unknown phase {request.phase_id}"})
        try:
            body = handler(request)
        except Exception as e:
            logger.error("phase %d handler failed: %s", request.phase_id, e)
            return request.reply({"error": f"{type(e).__name__}: {e}"})
        return request.reply(body or {})


def register_phase(registry: PhaseRegistry, phase_id: int, handler) -> PhaseRegistry:
    return registry.register(phase_id, handler)


class _Done:

    def __repr__(self):
        return "DONE"


DONE = _Done()
Round = Union[List[Message], _Done]


class Pipeline(ABC):
    """
    Master-side lifecycle. `init` opens initialization; `after_init` may ask
    for further initialization rounds. `step` is called first with the last
    initialization responses and then with each loop round's responses until
    it returns DONE. `finish` opens wrap-up; `after_finish` consumes its
    responses.
    """

    max_rounds: int = settings.PIPELINE_MAX_ROUNDS

    @abstractmethod
    def init(self) -> List[Message]:
        ...

    def after_init(self, responses: List[Message]) -> Round:
        return DONE

    @abstractmethod
    def step(self, responses: List[Message]) -> Round:
        ...

    @abstractmethod
    def finish(self) -> List[Message]:
        ...

    def after_finish(self, responses: List[Message]) -> None:
        pass


@dataclass
class Exchange:
    stage: str
    round_index: int
    request: Message
    response: Message


@dataclass
class TrainingReport:
    init_rounds: int = 0
    loop_rounds: int = 0
    finish_rounds: int = 0
    capped: bool = False
    exchanges: List[Exchange] = field(default_factory=list)
    wall_ms: Dict[int, float] = field(default_factory=dict)
    transcript_hash: str = ""

    def stage_sequence(self) -> List[str]:
        return [e.stage for e in self.exchanges]

    def loop_exchanges(self) -> List[Exchange]:
        return [e for e in self.exchanges if e.stage == "loop"]


def check_responses(responses: List[Message]) -> List[Message]:
    for response in responses:
        if "error" in response.body:
            raise RemoteError(response.sender, response.phase_id, str(response.body["error"]))
    return responses


def exchange_round(transport: Transport, requests: List[Message]) -> List[Message]:
    return check_responses(broadcast(transport, requests))


def run_pipeline(pipeline: Pipeline, transport: Transport) -> TrainingReport:
    report = TrainingReport()
    digest = hashlib.sha256()

    def run_round(stage: str, index: int, requests: List[Message]) -> List[Message]:
        started = time.perf_counter()
        try:
            responses = exchange_round(transport, requests)
        except Exception as e:
            logger.error("%s round %d failed: %s", stage, index, e)
            raise PipelineError(stage, index, e) from e
        elapsed = (time.perf_counter() - started) * 1000.0
        for request, response in zip(requests, responses):
            report.exchanges.append(Exchange(stage, index, request, response))
            report.wall_ms[request.phase_id] = report.wall_ms.get(request.phase_id, 0.0) + elapsed / len(requests)
            if stage == "loop":
                digest.update(encode_message(request))
                digest.update(encode_message(response))
        return responses

    def call(stage: str, index: int, func, *args):
        try:
            return func(*args)
        except PipelineError:
            raise
        except Exception as e:
            logger.error("%s round %d: pipeline raised %s", stage, index, e)
            raise PipelineError(stage, index, e) from e

    logger.info("pipeline %s: initialization", type(pipeline).__name__)
    report.init_rounds = 1
    responses = run_round("init", 1, call("init", 1, pipeline.init))
    follow = call("init", 2, pipeline.after_init, responses)
    while follow is not DONE:
        report.init_rounds += 1
        responses = run_round("init", report.init_rounds, follow)
        follow = call("init", report.init_rounds + 1, pipeline.after_init, responses)

    logger.info("pipeline %s: training loop", type(pipeline).__name__)
    while True:
        index = report.loop_rounds + 1
        requests = call("loop", index, pipeline.step, responses)
        if requests is DONE:
            break
        if report.loop_rounds >= pipeline.max_rounds:
            logger.warning("pipeline stopped at the %d-round cap", pipeline.max_rounds)
            report.capped = True
            break
        report.loop_rounds = index
        responses = run_round("loop", index, requests)

    logger.info("pipeline %s: wrap-up after %d rounds", type(pipeline).__name__, report.loop_rounds)
    report.finish_rounds = 1
    responses = run_round("finish", 1, call("finish", 1, pipeline.finish))
    call("finish", 1, pipeline.after_finish, responses)

    report.transcript_hash = digest.hexdigest()
    return report
