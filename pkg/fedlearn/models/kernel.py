from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List

import numpy as np

WEIGHTS_FILE = "kernel_weights.f64"


@dataclass
class KernelModel:
    """Coordinator-side view of a trained kernel model. Weights stay at the parties."""
    parties: List[str]
    D: int
    gamma: float
    seed: int
    normalization: str
    lam: float
    iterations: int
    residual_history: List[np.ndarray] = field(default_factory=list, repr=False)

    def to_manifest(self) -> dict:
        data = asdict(self)
        data.pop("residual_history")
        lam = data.pop("lam")
        return {"algorithm": "kernel", **data, "lambda": lam}

    @classmethod
    def from_manifest(cls, data: dict) -> "KernelModel":
        if data.get("algorithm") != "kernel":
            raise ValueError(f"manifest describes a {data.get('algorithm')!r} model, not a kernel model")
        return cls(
            parties=list(data["parties"]),
            D=int(data["D"]),
            gamma=float(data["gamma"]),
            seed=int(data["seed"]),
            normalization=str(data["normalization"]),
            lam=float(data["lambda"]),
            iterations=int(data["iterations"]),
        )


def save_weights(model_dir, w: np.ndarray) -> Path:
    path = Path(model_dir) / WEIGHTS_FILE
    path.parent.mkdir(parents=True, exist_ok=True)
    np.asarray(w, dtype="<f8").tofile(path)
    return path


def load_weights(model_dir) -> np.ndarray:
    path = Path(model_dir) / WEIGHTS_FILE
    if not path.exists():
        raise FileNotFoundError(f"no kernel weights at {path}")
    return np.fromfile(path, dtype="<f8").astype(np.float64)

