import numpy as np

from fedlearn.core.config import Phase
from fedlearn.core.phases import PhaseRouter

router = PhaseRouter()


@router.phase(Phase.KERNEL_SETUP)
def kernel_setup(service, request):
    body = request.body
    state = service.kernel.setup(
        index=int(body["index"]),
        D=int(body["D"]),
        gamma=float(body["gamma"]),
        seed=int(body["seed"]),
        normalization=str(body["normalization"]),
        lam=float(body["lambda"]),
    )
    return {"n": state.N, "u": state.u}


@router.phase(Phase.KERNEL_UPDATE)
def kernel_update(service, request):
    v = np.asarray(request.body["v"], dtype=np.float64)
    u = service.kernel.update(v, selected=bool(request.body["selected"]))
    if u is None:
        return {"unchanged": 1}
    return {"u": u}


@router.phase(Phase.KERNEL_FINALIZE)
def kernel_finalize(service, request):
    dims = service.kernel.finalize()
    return {"saved": int(service.kernel.model_dir is not None), "dims": dims}


@router.phase(Phase.KERNEL_PREDICT)
def kernel_predict(service, request):
    body = request.body
    score = service.kernel.predict(
        body["ids"],
        index=int(body["index"]),
        D=int(body["D"]),
        gamma=float(body["gamma"]),
        seed=int(body["seed"]),
        normalization=str(body["normalization"]),
    )
    return {"score": np.asarray(score, dtype=np.float64)}
