"""Applied-force estimation: prediction, weighted loss, training and evaluation."""

import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ContractViolation, DatasetError, TrainingError
from .models import EncoderConfig, Optimizer, TrainConfig, Variant
from .network import ForceNet, ParamLayout, build_layout, init_params
from .storage import DatasetFile, decode_checkpoint, encode_checkpoint
from .types import ActuatorLoad, DepthFrame

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "moe-sim-estimator"
CHECKPOINT_VERSION = 2
LAMBDA_RANGE = (1.0, 10.0)
EVAL_BATCH = 256
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class EstimatorParams:
    vector: np.ndarray
    variant: Variant
    encoder: EncoderConfig
    depth_scale: float
    q_scale: float
    wig: Optional[str] = None  # wig of the training data

    @property
    def layout(self) -> ParamLayout:
        return build_layout(self.encoder)

    def net(self) -> ForceNet:
        return ForceNet(self.encoder, self.variant)


@dataclass(frozen=True)
class Arrays:
    """Training view of a dataset: masked depth (N, H, W), loads (N, 4), labels (N, 3)."""

    depth: np.ndarray
    q: np.ndarray
    w: np.ndarray
    wig: Optional[str] = None

    def __len__(self) -> int:
        return self.q.shape[0]

    @classmethod
    def from_dataset(cls, dataset: DatasetFile) -> "Arrays":
        rec = dataset.records
        return cls(rec["depth"], rec["q"].astype(float), rec["w"].astype(float), dataset.wig)

    def take(self, index: np.ndarray) -> "Arrays":
        return Arrays(self.depth[index], self.q[index], self.w[index], self.wig)


@dataclass(frozen=True)
class RmseReport:
    total: float
    x: float
    y: float
    z: float
    count: int

    def as_row(self) -> dict:
        return {"rmse_total": self.total, "rmse_x": self.x, "rmse_y": self.y, "rmse_z": self.z}


History = List[Tuple[int, float, float]]


def prepare_images(depth: np.ndarray, depth_scale: float, coord_channels: bool) -> np.ndarray:
    """Scale masked depth and append pixel-coordinate channels gated by validity."""
    depth = np.asarray(depth)
    scaled = depth.astype(float) * depth_scale
    if not coord_channels:
        return scaled[:, None]
    n, h, w = depth.shape
    valid = (depth > 0).astype(float)
    xs = np.broadcast_to(np.linspace(-1.0, 1.0, w)[None, None, :], (n, h, w))
    ys = np.broadcast_to(np.linspace(-1.0, 1.0, h)[None, :, None], (n, h, w))
    return np.stack([scaled, xs * valid, ys * valid], axis=1)


def _forward(params: EstimatorParams, net: ForceNet, depth, q):
    images = (
        prepare_images(depth, params.depth_scale, params.encoder.coord_channels)
        if net.uses_depth
        else None
    )
    loads = np.asarray(q, dtype=float) / params.q_scale
    return net.forward(params.vector, images, loads)


def predict(params: EstimatorParams, masked_frame: DepthFrame, q: ActuatorLoad) -> np.ndarray:
    """Force on the head in the end-effector frame; only masked frames are accepted."""
    if not masked_frame.masked:
        raise ContractViolation("predict needs a frame produced by apply_mask")
    out = predict_batch(params, masked_frame.depth[None], q.q[None])
    return out[0]


def predict_batch(params: EstimatorParams, depth: np.ndarray, q: np.ndarray) -> np.ndarray:
    net = params.net()
    outputs = []
    for start in range(0, q.shape[0], EVAL_BATCH):
        stop = start + EVAL_BATCH
        out, _ = _forward(params, net, depth[start:stop], q[start:stop])
        outputs.append(out)
    return np.concatenate(outputs) if outputs else np.zeros((0, 3))


def weighted_mse(w, w_hat, lam) -> float:
    """||lam * (w - w_hat)||^2 for one sample."""
    lam = np.asarray(lam, dtype=float)
    if np.any(lam <= 0):
        raise ContractViolation("loss weights must be strictly positive")
    diff = lam * (np.asarray(w, dtype=float) - np.asarray(w_hat, dtype=float))
    return float(np.sum(diff**2))


def loss_gradient(
    params: EstimatorParams, batch: Arrays, lam
) -> Tuple[float, np.ndarray]:
    """Mean weighted loss over the batch and its exact gradient."""
    if len(batch) == 0:
        raise ContractViolation("loss gradient needs a non-empty batch")
    lam = np.asarray(lam, dtype=float)
    net = params.net()
    out, cache = _forward(params, net, batch.depth, batch.q)
    resid = out - batch.w
    n = len(batch)
    loss = float(np.sum((lam * resid) ** 2) / n)
    dout = 2.0 * lam**2 * resid / n
    return loss, net.backward(params.vector, cache, dout)


def mean_loss(params: EstimatorParams, data: Arrays, lam) -> float:
    pred = predict_batch(params, data.depth, data.q)
    return float(np.mean(np.sum((np.asarray(lam) * (pred - data.w)) ** 2, axis=1)))


def numerical_gradient(
    params: EstimatorParams, batch: Arrays, lam, step: float = 1e-6
) -> np.ndarray:
    """Central finite differences of the mean weighted loss."""
    grad = np.zeros_like(params.vector)
    for i in range(params.vector.size):
        bumped = params.vector.copy()
        bumped[i] += step
        up = loss_gradient(_with_vector(params, bumped), batch, lam)[0]
        bumped[i] -= 2.0 * step
        down = loss_gradient(_with_vector(params, bumped), batch, lam)[0]
        grad[i] = (up - down) / (2.0 * step)
    return grad


def gradient_error(params: EstimatorParams, batch: Arrays, lam, step: float = 1e-6) -> float:
    """Norm-relative disagreement between backprop and finite differences."""
    exact = loss_gradient(params, batch, lam)[1]
    approx = numerical_gradient(params, batch, lam, step)
    scale = max(np.linalg.norm(exact), np.linalg.norm(approx), 1e-300)
    return float(np.linalg.norm(exact - approx) / scale)


def _with_vector(params: EstimatorParams, vector: np.ndarray) -> EstimatorParams:
    return replace(params, vector=vector)


def default_lambda(w: np.ndarray) -> np.ndarray:
    """Per-axis weights sigma_z / sigma_k clamped to [1, 10]; the z weight is exactly 1."""
    w = np.asarray(w, dtype=float)
    if w.ndim != 2 or w.shape[1] != 3 or w.shape[0] < 10:
        raise ContractViolation("default_lambda needs at least 10 labelled samples")
    sigma = w.std(axis=0)
    lam = np.empty(3)
    for k in range(3):
        if sigma[k] == 0.0:
            lam[k] = LAMBDA_RANGE[1]
        else:
            lam[k] = np.clip(sigma[2] / sigma[k], *LAMBDA_RANGE)
    lam[2] = 1.0
    return lam


def init_estimator(
    config: TrainConfig, variant: Variant, q_scale: float, rng: np.random.Generator
) -> EstimatorParams:
    layout = build_layout(config.encoder)
    return EstimatorParams(
        init_params(layout, rng), Variant(variant), config.encoder, config.depth_scale, q_scale
    )


class _Stepper:
    """Update rule over the flat parameter vector: momentum SGD or Adam."""

    def __init__(self, config: TrainConfig, size: int):
        self.config = config
        self.first = np.zeros(size)
        self.second = np.zeros(size)
        self.count = 0

    def __call__(self, grad: np.ndarray) -> np.ndarray:
        c = self.config
        if c.optimizer is Optimizer.SGD:
            self.first = c.momentum * self.first - c.learning_rate * grad
            return self.first
        self.count += 1
        self.first = c.momentum * self.first + (1.0 - c.momentum) * grad
        self.second = ADAM_BETA2 * self.second + (1.0 - ADAM_BETA2) * grad**2
        first = self.first / (1.0 - c.momentum**self.count)
        second = self.second / (1.0 - ADAM_BETA2**self.count)
        return -c.learning_rate * first / (np.sqrt(second) + ADAM_EPS)


def train(
    train_set: Arrays,
    val_set: Arrays,
    config: TrainConfig,
    variant: Variant,
    on_epoch: Optional[Callable[[int, float, float], None]] = None,
) -> Tuple[EstimatorParams, History]:
    """Minimise the weighted loss; returns the parameters of the best validation epoch.

    The output bias starts at the mean training label. Checkpoints remember the wig of
    ``train_set``.
    """
    if len(train_set) == 0:
        raise ContractViolation("training set is empty")
    if config.loss_weights is not None:
        lam = np.asarray(config.loss_weights, dtype=float)
    elif len(train_set) >= 10:
        lam = default_lambda(train_set.w)
    else:
        lam = np.ones(3)
    q_scale = config.q_scale or float(np.max(train_set.q)) or 1.0
    rng = np.random.default_rng(config.seed)
    params = replace(init_estimator(config, variant, q_scale, rng), wig=train_set.wig)
    vector = params.vector.copy()
    params.layout.view(vector, "head.b")[...] = train_set.w.mean(axis=0)
    stepper = _Stepper(config, vector.size)
    monitor = val_set if len(val_set) else train_set

    best_loss, best_vector, best_epoch = np.inf, vector.copy(), 0
    history: History = []
    n = len(train_set)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            loss, grad = loss_gradient(_with_vector(params, vector), train_set.take(idx), lam)
            if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
                raise TrainingError(epoch)
            norm = float(np.linalg.norm(grad))
            if config.grad_clip is not None and norm > config.grad_clip:
                grad = grad * (config.grad_clip / norm)
            vector = vector + stepper(grad)
            total += loss * idx.size
        train_loss = total / n
        val_loss = mean_loss(_with_vector(params, vector), monitor, lam)
        if not np.isfinite(val_loss):
            raise TrainingError(epoch, "validation loss became non-finite")
        history.append((epoch, train_loss, val_loss))
        logger.debug("epoch %d: train %.5f val %.5f", epoch, train_loss, val_loss)
        if on_epoch is not None:
            on_epoch(epoch, train_loss, val_loss)
        if val_loss < best_loss:
            best_loss, best_vector, best_epoch = val_loss, vector.copy(), epoch

    logger.info("best %s epoch %d (val loss %.5f)", Variant(variant).value, best_epoch, best_loss)
    return _with_vector(params, best_vector), history


def evaluate_rmse(params: EstimatorParams, data: Arrays) -> RmseReport:
    if len(data) == 0:
        raise ContractViolation("evaluation set is empty")
    err = predict_batch(params, data.depth, data.q) - data.w
    per_axis = np.sqrt(np.mean(err**2, axis=0))
    total = float(np.sqrt(np.mean(np.sum(err**2, axis=1) / 3.0)))
    return RmseReport(total, float(per_axis[0]), float(per_axis[1]), float(per_axis[2]), len(data))


def save_params(params: EstimatorParams, path: Union[str, Path]) -> None:
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "variant": params.variant.value,
        "encoder": params.encoder.model_dump(mode="json"),
        "shapes": params.layout.to_table(),
        "depth_scale": params.depth_scale,
        "q_scale": params.q_scale,
        "wig": params.wig,
    }
    Path(path).write_bytes(encode_checkpoint(header, params.vector))


def load_params(path: Union[str, Path]) -> EstimatorParams:
    try:
        blob = Path(path).read_bytes()
    except FileNotFoundError as exc:
        raise DatasetError(f"checkpoint not found: {path}") from exc
    header, vector = decode_checkpoint(blob)
    if header.get("format") != CHECKPOINT_FORMAT or header.get("version") != CHECKPOINT_VERSION:
        raise DatasetError(f"{path} is not a supported estimator checkpoint")
    encoder = EncoderConfig.model_validate(header["encoder"])
    layout = build_layout(encoder)
    if ParamLayout.from_table(header["shapes"]) != layout or vector.size != layout.size:
        raise DatasetError("checkpoint shape table does not match its encoder config")
    return EstimatorParams(
        vector,
        Variant(header["variant"]),
        encoder,
        header["depth_scale"],
        header["q_scale"],
        header.get("wig"),
    )


def write_history(history: Sequence[Tuple[int, float, float]], path: Union[str, Path]) -> None:
    lines = ["epoch,train_loss,val_loss"]
    lines += [f"{epoch},{train:.10g},{val:.10g}" for epoch, train, val in history]
    Path(path).write_text("\n".join(lines) + "\n")
