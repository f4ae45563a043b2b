from fedlearn.core.config import Phase
from fedlearn.core.phases import PhaseRouter
from fedlearn.core.wire import BigIntVec

router = PhaseRouter()


@router.phase(Phase.RF_SETUP)
def forest_setup(service, request):
    if service.is_active:
        return service.forest.setup_active(request.body)
    return service.forest.setup_passive(request.body)


@router.phase(Phase.RF_STATS)
def forest_stats(service, request):
    body = request.body
    return service.forest.stats(int(body["tree"]), int(body["node"]), body["ids"])


@router.phase(Phase.RF_SPLIT)
def forest_split(service, request):
    body = request.body
    return service.forest.split(int(body["tree"]), int(body["node"]), int(body["feature"]), int(body["quantile"]))


@router.phase(Phase.RF_TREE)
def forest_tree(service, request):
    ids = service.forest.tree_subsample(int(request.body["tree"]))
    return {"ids": BigIntVec(ids)}


@router.phase(Phase.RF_SELECT)
def forest_select(service, request):
    body = request.body
    return service.forest.select(int(body["tree"]), int(body["node"]), body)


@router.phase(Phase.RF_FINALIZE)
def forest_finalize(service, request):
    return {"records": service.forest.finalize()}


@router.phase(Phase.RF_STEP)
def forest_step(service, request):
    return {"directions": service.forest.step(request.body["records"], request.body["samples"])}
