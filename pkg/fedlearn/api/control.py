import logging

from fedlearn.core.config import Phase
from fedlearn.core.phases import PhaseRouter
from fedlearn.core.wire import BigIntVec

logger = logging.getLogger(__name__)

router = PhaseRouter()


@router.phase(Phase.SHUTDOWN)
def shutdown(service, request):
    logger.info("party %s: shutdown requested by %s", service.name, request.sender)
    service.stop.set()
    return {}


@router.phase(Phase.EVALUATE)
def evaluate(service, request):
    body = request.body
    accuracy, n = service.evaluate(body["ids"], body["predicted"], str(body["algorithm"]))
    return {"accuracy": accuracy, "n": n}


@router.phase(Phase.DESCRIBE)
def describe(service, request):
    table = service.table
    return {"ids": BigIntVec(table.ids), "features": table.n_features, "active": int(service.is_active)}
