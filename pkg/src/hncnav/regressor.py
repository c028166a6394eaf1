"""Missing-beam regression: average estimator and a small 1-D CNN (numpy, from scratch).

Network for ``k`` missing beams with ``N`` past epochs (``N = 3`` for k = 2,
``N = 5`` for k = 3)::

    past (N x 4) --conv1d(k=2, s=2, 4 -> 2N ch), tanh--> Z
    Y  = pad(flatten(Z), 4N) + flatten(past)
    L  = relu(W2 relu(W1 Y + b1) + b2)                 # 4N -> 16 -> k
    U  = [L, partial (4 - k), mean of past (4)]        # length 8
    O  = act(W3 U + b3)                                # 8 -> k

Arrays use beam order 1..4; ``MissingPattern.missing`` holds beam numbers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import ConfigurationError, TrainingDiverged

HIDDEN = 16
U_LEN = 8
KERNEL = 2
STRIDE = 2
PARAM_NAMES = ("conv_w", "conv_b", "W1", "b1", "W2", "b2", "W3", "b3")
HISTORY_FOR_K = {2: 3, 3: 5}


@dataclass(frozen=True)
class MissingPattern:
    missing: tuple[int, ...]

    def __post_init__(self):
        ids = tuple(sorted(int(b) for b in self.missing))
        if len(set(ids)) != len(ids) or any(b not in (1, 2, 3, 4) for b in ids):
            raise ValueError(f"invalid missing beam set {self.missing}")
        if len(ids) not in (2, 3):
            raise ValueError("only two or three missing beams are supported")
        object.__setattr__(self, "missing", ids)

    @property
    def k(self) -> int:
        return len(self.missing)

    @property
    def measured(self) -> tuple[int, ...]:
        return tuple(b for b in (1, 2, 3, 4) if b not in self.missing)

    @property
    def missing_idx(self) -> NDArray[np.intp]:
        return np.array(self.missing, dtype=np.intp) - 1

    @property
    def measured_idx(self) -> NDArray[np.intp]:
        return np.array(self.measured, dtype=np.intp) - 1

    @property
    def history(self) -> int:
        return HISTORY_FOR_K[self.k]

    @property
    def valid_mask(self) -> NDArray[np.bool_]:
        mask = np.ones(4, dtype=bool)
        mask[self.missing_idx] = False
        return mask

    @property
    def label(self) -> str:
        return "missing_" + "".join(str(b) for b in self.missing)


TWO_MISSING = MissingPattern((1, 3))
THREE_MISSING = MissingPattern((1, 3, 4))


@dataclass(frozen=True)
class RegressorInput:
    past: NDArray[np.float64]
    partial: NDArray[np.float64]

    def __post_init__(self):
        past = np.asarray(self.past, dtype=float)
        partial = np.atleast_1d(np.asarray(self.partial, dtype=float))
        if past.ndim != 2 or past.shape[1] != 4:
            raise ValueError("past must be an N x 4 array")
        if partial.size not in (1, 2):
            raise ValueError("partial must hold one or two measured beams")
        object.__setattr__(self, "past", past)
        object.__setattr__(self, "partial", partial)

    @property
    def mean4(self) -> NDArray[np.float64]:
        return self.past.mean(axis=0)


def average_estimate(inp: RegressorInput, pattern: MissingPattern) -> NDArray[np.float64]:
    """Mean of the past beams at the missing positions."""
    if inp.partial.size != 4 - pattern.k:
        raise ValueError("partial size does not match the missing pattern")
    return inp.mean4[pattern.missing_idx]


def complete_beams(pattern: MissingPattern, partial: ArrayLike, predicted: ArrayLike) -> NDArray[np.float64]:
    """Merge measured and predicted beams into a 4-vector in beam order."""
    partial = np.atleast_1d(np.asarray(partial, dtype=float))
    predicted = np.atleast_1d(np.asarray(predicted, dtype=float))
    if partial.size + predicted.size != 4 or predicted.size != pattern.k:
        raise ValueError("partial and predicted beams must fill exactly four slots")
    out = np.empty(4)
    out[pattern.missing_idx] = predicted
    out[pattern.measured_idx] = partial
    return out


# ---------------------------------------------------------------------------
# network


def _conv_len(N: int) -> int:
    return (N - KERNEL) // STRIDE + 1


@dataclass
class RegressorModel:
    conv_w: NDArray[np.float64]
    conv_b: NDArray[np.float64]
    W1: NDArray[np.float64]
    b1: NDArray[np.float64]
    W2: NDArray[np.float64]
    b2: NDArray[np.float64]
    W3: NDArray[np.float64]
    b3: NDArray[np.float64]
    pattern: MissingPattern = TWO_MISSING
    output_activation: str = "linear"
    rng_seed: int = 0

    def __post_init__(self):
        if self.output_activation not in ("linear", "relu"):
            raise ValueError("output_activation must be 'linear' or 'relu'")
        for name, shape in expected_shapes(self.pattern).items():
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != shape:
                raise ConfigurationError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ConfigurationError(f"{name} has non-finite entries")
            setattr(self, name, arr)

    @property
    def k(self) -> int:
        return self.pattern.k

    @property
    def N(self) -> int:
        return self.pattern.history

    @classmethod
    def initialize(cls, pattern: MissingPattern, seed: int = 0, output_activation: str = "linear") -> "RegressorModel":
        """Uniform ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` initialisation."""
        rng = np.random.default_rng(seed)
        params = {}
        for name, shape in expected_shapes(pattern).items():
            weight_name = {"conv_b": "conv_w", "b1": "W1", "b2": "W2", "b3": "W3"}.get(name, name)
            wshape = expected_shapes(pattern)[weight_name]
            fan_in = int(np.prod(wshape[1:]))
            bound = 1.0 / np.sqrt(fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape)
        return cls(**params, pattern=pattern, output_activation=output_activation, rng_seed=seed)

    def params(self) -> dict[str, NDArray[np.float64]]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> "RegressorModel":
        return RegressorModel(
            **{n: p.copy() for n, p in self.params().items()},
            pattern=self.pattern,
            output_activation=self.output_activation,
            rng_seed=self.rng_seed,
        )


def expected_shapes(pattern: MissingPattern) -> dict[str, tuple[int, ...]]:
    k, N = pattern.k, pattern.history
    return {
        "conv_w": (2 * N, 4, KERNEL),
        "conv_b": (2 * N,),
        "W1": (HIDDEN, 4 * N),
        "b1": (HIDDEN,),
        "W2": (k, HIDDEN),
        "b2": (k,),
        "W3": (k, U_LEN),
        "b3": (k,),
    }


def _patches(X: NDArray[np.float64]) -> NDArray[np.float64]:
    """``X[b, 2l + j, c]`` rearranged to shape ``(B, L_out, 4, KERNEL)``."""
    B, N, _ = X.shape
    n_out = _conv_len(N)
    rows = STRIDE * np.arange(n_out)[:, None] + np.arange(KERNEL)[None, :]
    return X[:, rows, :].transpose(0, 1, 3, 2)


def _forward_batch(model: RegressorModel, X, P):
    B, N, _ = X.shape
    patches = _patches(X)
    pre = np.einsum("blcj,ocj->bol", patches, model.conv_w) + model.conv_b[None, :, None]
    Z = np.tanh(pre)
    z_flat = Z.reshape(B, -1)
    Y = X.reshape(B, 4 * N).copy()
    Y[:, : z_flat.shape[1]] += z_flat
    a1 = Y @ model.W1.T + model.b1
    h1 = np.maximum(a1, 0.0)
    a2 = h1 @ model.W2.T + model.b2
    L = np.maximum(a2, 0.0)
    U = np.concatenate([L, P, X.mean(axis=1)], axis=1)
    a3 = U @ model.W3.T + model.b3
    out = np.maximum(a3, 0.0) if model.output_activation == "relu" else a3
    cache = (patches, Z, Y, a1, h1, a2, U, a3)
    return out, cache


def _backward_batch(model: RegressorModel, cache, d_out) -> dict[str, NDArray[np.float64]]:
    patches, Z, Y, a1, h1, a2, U, a3 = cache
    k = model.k
    d3 = d_out * (a3 > 0) if model.output_activation == "relu" else d_out
    grads = {"W3": d3.T @ U, "b3": d3.sum(axis=0)}
    dL = (d3 @ model.W3)[:, :k]
    d2 = dL * (a2 > 0)
    grads["W2"] = d2.T @ h1
    grads["b2"] = d2.sum(axis=0)
    d1 = (d2 @ model.W2) * (a1 > 0)
    grads["W1"] = d1.T @ Y
    grads["b1"] = d1.sum(axis=0)
    dY = d1 @ model.W1
    # padded tail of Y only carries the residual input, not the conv output
    dZ = dY[:, : Z.shape[1] * Z.shape[2]].reshape(Z.shape)
    dpre = dZ * (1.0 - Z * Z)
    grads["conv_w"] = np.einsum("bol,blcj->ocj", dpre, patches)
    grads["conv_b"] = dpre.sum(axis=(0, 2))
    return grads


def _stack_inputs(model: RegressorModel, inputs: Sequence[RegressorInput]):
    X = np.stack([inp.past for inp in inputs])
    P = np.stack([inp.partial for inp in inputs])
    if X.shape[1:] != (model.N, 4) or P.shape[1] != 4 - model.k:
        raise ValueError(
            f"input shapes {X.shape[1:]}/{P.shape[1:]} do not match a k={model.k}, N={model.N} model"
        )
    return X, P


def forward(model: RegressorModel, inp: RegressorInput) -> NDArray[np.float64]:
    """Predicted missing beams for one input."""
    X, P = _stack_inputs(model, [inp])
    return _forward_batch(model, X, P)[0][0]


def mse(target, output) -> float:
    diff = np.asarray(target, dtype=float) - np.asarray(output, dtype=float)
    return float(np.mean(diff * diff))


def backward(model: RegressorModel, inp: RegressorInput, target: ArrayLike) -> dict[str, NDArray[np.float64]]:
    """Gradients of ``mse(target, forward(model, inp))`` for every parameter."""
    X, P = _stack_inputs(model, [inp])
    out, cache = _forward_batch(model, X, P)
    target = np.asarray(target, dtype=float).reshape(out.shape)
    return _backward_batch(model, cache, 2.0 * (out - target) / out.size)


# ---------------------------------------------------------------------------
# datasets and training


@dataclass
class BeamDataset:
    past: NDArray[np.float64]  # (S, N, 4)
    partial: NDArray[np.float64]  # (S, 4 - k)
    target: NDArray[np.float64]  # (S, k)

    def __len__(self) -> int:
        return self.past.shape[0]

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[RegressorInput, ArrayLike]]) -> "BeamDataset":
        pairs = list(pairs)
        if not pairs:
            return cls(np.zeros((0, 0, 4)), np.zeros((0, 0)), np.zeros((0, 0)))
        return cls(
            np.stack([p.past for p, _ in pairs]),
            np.stack([p.partial for p, _ in pairs]),
            np.stack([np.atleast_1d(np.asarray(t, dtype=float)) for _, t in pairs]),
        )

    def concat(self, other: "BeamDataset") -> "BeamDataset":
        return BeamDataset(
            np.concatenate([self.past, other.past]),
            np.concatenate([self.partial, other.partial]),
            np.concatenate([self.target, other.target]),
        )


def build_dataset(beams: ArrayLike, pattern: MissingPattern) -> BeamDataset:
    """Window a fully measured beam log (``(S, 4)``) into training samples.

    For every epoch ``t >= N`` the past is ``beams[t-N:t]``, the partial input
    the measured beams at ``t`` and the target the beams the pattern removes.
    """
    beams = np.asarray(beams, dtype=float)
    N = pattern.history
    if beams.ndim != 2 or beams.shape[1] != 4:
        raise ValueError("beam log must have shape (S, 4)")
    if not np.all(np.isfinite(beams)):
        raise ValueError("training beam log must be fully measured")
    S = beams.shape[0] - N
    if S <= 0:
        return BeamDataset(np.zeros((0, N, 4)), np.zeros((0, 4 - pattern.k)), np.zeros((0, pattern.k)))
    idx = np.arange(N)[None, :] + np.arange(S)[:, None]
    current = beams[N:]
    return BeamDataset(beams[idx], current[:, pattern.measured_idx], current[:, pattern.missing_idx])


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 4
    learning_rate: float = 1e-3
    lr_decay: float = 0.1
    lr_step_epochs: int = 35
    epochs: int = 100
    rms_alpha: float = 0.99
    rms_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if min(self.batch_size, self.learning_rate, self.lr_decay, self.lr_step_epochs, self.epochs) <= 0:
            raise ValueError("training hyper-parameters must be positive")


@dataclass
class TrainResult:
    model: RegressorModel
    losses: list[float] = field(default_factory=list)


def train(model: RegressorModel, dataset, cfg: TrainConfig = TrainConfig()) -> TrainResult:
    """RMSprop training on mini-batches; returns the trained copy and per-epoch mean loss."""
    data = dataset if isinstance(dataset, BeamDataset) else BeamDataset.from_pairs(dataset)
    if len(data) == 0:
        raise ValueError("training dataset is empty")
    if data.past.shape[1:] != (model.N, 4) or data.target.shape[1] != model.k:
        raise ValueError("dataset shapes do not match the model")

    model = model.copy()
    rng = np.random.default_rng(cfg.seed)
    sq_avg = {n: np.zeros_like(p) for n, p in model.params().items()}
    losses = []
    n = len(data)
    for epoch in range(cfg.epochs):
        lr = cfg.learning_rate * cfg.lr_decay ** (epoch // cfg.lr_step_epochs)
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            sel = order[start : start + cfg.batch_size]
            out, cache = _forward_batch(model, data.past[sel], data.partial[sel])
            err = out - data.target[sel]
            total += float(np.sum(err * err)) / model.k
            grads = _backward_batch(model, cache, 2.0 * err / err.size)
            for name, g in grads.items():
                v = sq_avg[name]
                v *= cfg.rms_alpha
                v += (1.0 - cfg.rms_alpha) * g * g
                param = getattr(model, name)
                param -= lr * g / (np.sqrt(v) + cfg.rms_eps)
        epoch_loss = total / n
        if not np.isfinite(epoch_loss):
            raise TrainingDiverged(f"loss became non-finite in epoch {epoch}")
        losses.append(epoch_loss)
    return TrainResult(model=model, losses=losses)


def predict_batch(model: RegressorModel, data: BeamDataset) -> NDArray[np.float64]:
    return _forward_batch(model, data.past, data.partial)[0]


def average_batch(pattern: MissingPattern, data: BeamDataset) -> NDArray[np.float64]:
    return data.past.mean(axis=1)[:, pattern.missing_idx]


# ---------------------------------------------------------------------------
# estimators used inside the fusion loop


class AverageEstimator:
    def __init__(self, pattern: MissingPattern, history: int | None = None):
        self.pattern = pattern
        self.history = pattern.history if history is None else history

    def predict(self, past, partial) -> NDArray[np.float64]:
        return average_estimate(RegressorInput(past, partial), self.pattern)


class NetworkEstimator:
    def __init__(self, model: RegressorModel):
        self.model = model
        self.pattern = model.pattern
        self.history = model.N

    def predict(self, past, partial) -> NDArray[np.float64]:
        return forward(self.model, RegressorInput(past, partial))


# ---------------------------------------------------------------------------
# serialization


def model_to_dict(model: RegressorModel) -> dict:
    params = model.params()
    return {
        "k": model.k,
        "N": model.N,
        "missing": list(model.pattern.missing),
        "output_activation": model.output_activation,
        "seed": model.rng_seed,
        "shapes": {n: list(p.shape) for n, p in params.items()},
        "layers": {n: p.ravel().tolist() for n, p in params.items()},
    }


def model_from_dict(doc: dict) -> RegressorModel:
    try:
        pattern = MissingPattern(tuple(doc["missing"]))
        if int(doc["k"]) != pattern.k or int(doc["N"]) != pattern.history:
            raise ConfigurationError(
                f"k={doc['k']}, N={doc['N']} inconsistent with missing beams {pattern.missing}"
            )
        shapes = expected_shapes(pattern)
        params = {}
        for name, shape in shapes.items():
            if tuple(doc["shapes"][name]) != shape:
                raise ConfigurationError(f"{name} shape {doc['shapes'][name]} != expected {list(shape)}")
            params[name] = np.asarray(doc["layers"][name], dtype=float).reshape(shape)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(f"malformed model document: {exc}") from exc
    return RegressorModel(
        **params,
        pattern=pattern,
        output_activation=doc.get("output_activation", "linear"),
        rng_seed=int(doc.get("seed", 0)),
    )


def save_model(model: RegressorModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model)))


def load_model(path: str | Path) -> RegressorModel:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"model file {path} not found")
    return model_from_dict(json.loads(path.read_text()))
