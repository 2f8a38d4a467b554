"""Neural surrogate of the MTV margin with analytic input gradient and Hessian.

The network maps the relative pose (x_rel, y_rel, psi_rel) of robot j in
robot i's frame to the margin of two equal rectangles. A rectangle turned by
half a revolution covers the same area, so psi_rel is first folded into
[-pi/2, pi/2]; the fold shifts psi_rel by a constant multiple of pi and leaves
every input derivative unchanged. Inputs are then scaled over the trained
range, hidden layers use tanh and the output layer is affine.
"""

import math
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import ModelFormatError, TrainingError
from .geometry import mtv_margin_batch
from .vehicle_dynamics import VehicleParams

logger = logging.getLogger(__name__)

MODEL_MAGIC = "MLP-MARGIN v1"
DEFAULT_LAYER_DIMS = (3, 62, 62, 1)
SUPPORTED_ACTIVATIONS = ("tanh",)


@dataclass(frozen=True)
class InputRange:
    """Box of relative poses the surrogate is trained on, as half-extents around zero"""

    x_half: float
    y_half: float
    psi_half: float = math.pi

    @classmethod
    def for_vehicle(cls, params: VehicleParams, multiple: float = 3.0) -> "InputRange":
        reach = multiple * params.wheelbase
        return cls(reach, reach, math.pi)

    @property
    def half_extents(self) -> np.ndarray:
        return np.array([self.x_half, self.y_half, self.psi_half])

    def contains(self, x_rel: float, y_rel: float) -> bool:
        return abs(x_rel) <= self.x_half and abs(y_rel) <= self.y_half

    def sample(self, count: int, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        half = self.half_extents
        return rng.uniform(-half, half, size=(count, 3))


@dataclass
class MlpParams:
    layer_dims: Tuple[int, ...]
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    input_offset: np.ndarray
    input_scale: np.ndarray
    activation: str = "tanh"

    def __post_init__(self):
        self.layer_dims = tuple(int(d) for d in self.layer_dims)
        if len(self.layer_dims) < 2 or self.layer_dims[0] != 3 or self.layer_dims[-1] != 1:
            raise ValueError(f"Layer dims must start at 3 and end at 1, got {self.layer_dims}")
        if self.activation not in SUPPORTED_ACTIVATIONS:
            raise ValueError(f"Unsupported activation {self.activation!r}")
        if len(self.weights) != len(self.layer_dims) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("One weight matrix and one bias vector are needed per layer")
        for index, (weight, bias) in enumerate(zip(self.weights, self.biases)):
            expected = (self.layer_dims[index + 1], self.layer_dims[index])
            if weight.shape != expected or bias.shape != (expected[0],):
                raise ValueError(
                    f"Layer {index} has weight {weight.shape} and bias {bias.shape}, expected {expected}"
                )
        self.input_offset = np.asarray(self.input_offset, dtype=float)
        self.input_scale = np.asarray(self.input_scale, dtype=float)
        if self.input_offset.shape != (3,) or self.input_scale.shape != (3,):
            raise ValueError("Input offset and scale must be 3-vectors")
        arrays = [*self.weights, *self.biases, self.input_offset, self.input_scale]
        if not all(np.all(np.isfinite(a)) for a in arrays):
            raise ValueError("Network parameters must be finite")
        if np.any(self.input_scale <= 0):
            raise ValueError("Input scale must be positive")
        if np.any(self.input_offset != 0):
            raise ValueError("Input offset must be zero; the trained range is centered on the ego")

    @property
    def trained_range(self) -> InputRange:
        """Box mapped onto [-1, 1] by the input scale"""
        half = 1.0 / self.input_scale
        return InputRange(float(half[0]), float(half[1]), float(half[2]))

    def copy(self) -> "MlpParams":
        return MlpParams(
            layer_dims=self.layer_dims,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            input_offset=self.input_offset.copy(),
            input_scale=self.input_scale.copy(),
            activation=self.activation,
        )


@dataclass(frozen=True)
class TrainingConfig:
    sample_count: int = 70_000
    seed: int = 0
    batch_size: int = 256
    learning_rate: float = 3e-3
    min_learning_rate: float = 1e-6
    decay_factor: float = 0.5
    plateau_patience: int = 50
    max_epochs: int = 3000
    validation_split: float = 0.1
    target_mse: float = 2e-5
    hidden_dims: Tuple[int, ...] = (62, 62)

    def __post_init__(self):
        if self.sample_count <= 0:
            raise ValueError(f"sample_count must be positive, got {self.sample_count}")
        if self.batch_size <= 0:
            raise ValueError(f"batch_size must be positive, got {self.batch_size}")
        if self.max_epochs < 0:
            raise ValueError(f"max_epochs must be non-negative, got {self.max_epochs}")
        if not 0.0 <= self.validation_split < 1.0:
            raise ValueError(f"validation_split must lie in [0, 1), got {self.validation_split}")
        if not 0.0 < self.decay_factor < 1.0:
            raise ValueError(f"decay_factor must lie in (0, 1), got {self.decay_factor}")


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray
    targets: np.ndarray

    def __len__(self):
        return self.targets.shape[0]


@dataclass(frozen=True)
class ErrorBound:
    epsilon_max: float
    epsilon_mean: float
    eval_count: int
    seed: int
    width: float = 0.08

    @property
    def max_percent_of_width(self) -> float:
        return 100.0 * self.epsilon_max / self.width

    @property
    def mean_percent_of_width(self) -> float:
        return 100.0 * self.epsilon_mean / self.width


@dataclass
class TrainingHistory:
    train_mse: List[float] = field(default_factory=list)
    validation_mse: List[float] = field(default_factory=list)
    learning_rate: List[float] = field(default_factory=list)


def margin_targets(inputs: np.ndarray, dims: VehicleParams) -> np.ndarray:
    """Exact MTV margins for relative poses (ego at the origin, both rectangles of equal size)"""
    inputs = np.atleast_2d(inputs)
    return mtv_margin_batch(inputs[:, 0], inputs[:, 1], inputs[:, 2], dims.length, dims.width)


def generate_dataset(input_range: InputRange, count: int, seed: int, dims: VehicleParams) -> Dataset:
    """Uniform samples of the input box labelled with the exact margin"""
    if count <= 0:
        raise ValueError(f"count must be positive, got {count}")
    inputs = input_range.sample(count, seed)
    logger.info(f"Generating {count} samples (seed {seed})")
    return Dataset(inputs=inputs, targets=margin_targets(inputs, dims))


def save_dataset(dataset: Dataset, path: str):
    rows = np.column_stack([dataset.inputs, dataset.targets])
    np.savetxt(path, rows, fmt="%.17g", delimiter=",", header="x_rel,y_rel,psi_rel,margin", comments="")


def load_dataset(path: str) -> Dataset:
    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if rows.shape[1] != 4:
        raise ValueError(f"{path}: expected 4 columns, found {rows.shape[1]}")
    return Dataset(inputs=rows[:, :3].copy(), targets=rows[:, 3].copy())


def init_params(
    input_range: InputRange,
    seed: int,
    layer_dims: Sequence[int] = DEFAULT_LAYER_DIMS,
    output_bias: float = 0.0,
) -> MlpParams:
    """Glorot-uniform hidden layers, zero output weights, output bias as given"""
    rng = np.random.default_rng(seed)
    layer_dims = tuple(layer_dims)
    weights, biases = [], []
    for index in range(len(layer_dims) - 1):
        fan_in, fan_out = layer_dims[index], layer_dims[index + 1]
        if index == len(layer_dims) - 2:
            weights.append(np.zeros((fan_out, fan_in)))
            biases.append(np.full(fan_out, float(output_bias)))
        else:
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
    return MlpParams(
        layer_dims=layer_dims,
        weights=weights,
        biases=biases,
        input_offset=np.zeros(3),
        input_scale=1.0 / input_range.half_extents,
    )


def fold_heading(psi):
    """Map headings into [-pi/2, pi/2] by whole multiples of pi"""
    return psi - math.pi * np.round(np.asarray(psi, dtype=float) / math.pi)


def _normalize(params: MlpParams, x: np.ndarray) -> np.ndarray:
    folded = x.copy()
    folded[:, 2] = fold_heading(x[:, 2])
    return (folded - params.input_offset) * params.input_scale


def _propagate(params: MlpParams, inputs: np.ndarray, order: int):
    """Value and, up to `order`, input Jacobian and second-derivative tensor for a batch"""
    x = np.atleast_2d(np.asarray(inputs, dtype=float))
    count = x.shape[0]
    act = _normalize(params, x)
    jac = np.broadcast_to(np.diag(params.input_scale), (count, 3, 3)) if order >= 1 else None
    curv = None

    last = len(params.weights) - 1
    for index, (weight, bias) in enumerate(zip(params.weights, params.biases)):
        pre = act @ weight.T + bias
        pre_jac = np.einsum("ok,nkd->nod", weight, jac) if order >= 1 else None
        pre_curv = None
        if order >= 2:
            pre_curv = (np.einsum("ok,nkde->node", weight, curv) if curv is not None
                        else np.zeros((count, weight.shape[0], 3, 3)))
        if index == last:
            act, jac, curv = pre, pre_jac, pre_curv
            break
        act = np.tanh(pre)
        slope = 1.0 - act ** 2
        if order >= 1:
            jac = slope[:, :, None] * pre_jac
        if order >= 2:
            bend = -2.0 * act * slope
            curv = (bend[:, :, None, None] * np.einsum("nod,noe->node", pre_jac, pre_jac)
                    + slope[:, :, None, None] * pre_curv)
    return act[:, 0], (jac[:, 0, :] if order >= 1 else None), (curv[:, 0] if order >= 2 else None)


def _is_single(inputs) -> bool:
    return np.ndim(inputs) == 1


def forward(params: MlpParams, inputs) -> float:
    """Network output for one 3-vector (float) or an (N, 3) batch (array)"""
    value, _, _ = _propagate(params, inputs, order=0)
    return float(value[0]) if _is_single(inputs) else value


def gradient(params: MlpParams, inputs) -> np.ndarray:
    """Gradient of the output with respect to the raw (unnormalized) input"""
    _, jac, _ = _propagate(params, inputs, order=1)
    return jac[0] if _is_single(inputs) else jac


def hessian(params: MlpParams, inputs) -> np.ndarray:
    """Hessian with respect to the raw input, symmetric by construction"""
    _, _, curv = _propagate(params, inputs, order=2)
    curv = 0.5 * (curv + np.swapaxes(curv, -1, -2))
    return curv[0] if _is_single(inputs) else curv


def value_gradient_hessian(params: MlpParams, inputs) -> Tuple[float, np.ndarray, np.ndarray]:
    """All three quantities for one 3-vector in a single pass"""
    value, jac, curv = _propagate(params, inputs, order=2)
    curv = 0.5 * (curv + np.swapaxes(curv, -1, -2))
    return float(value[0]), jac[0], curv[0]


def lipschitz_estimate(params: MlpParams, points_per_axis: int) -> float:
    """Largest gradient norm over a regular grid spanning the trained range"""
    half = params.trained_range.half_extents
    axes = [np.linspace(-h, h, points_per_axis) for h in half]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    return float(np.max(np.linalg.norm(gradient(params, grid), axis=1)))


def _parameter_gradients(params: MlpParams, inputs: np.ndarray, targets: np.ndarray):
    """Mean-squared-error loss and its gradient with respect to every weight and bias"""
    activations = [_normalize(params, np.atleast_2d(inputs))]
    last = len(params.weights) - 1
    for index, (weight, bias) in enumerate(zip(params.weights, params.biases)):
        pre = activations[-1] @ weight.T + bias
        activations.append(pre if index == last else np.tanh(pre))

    residual = activations[-1][:, 0] - targets
    loss = float(np.mean(residual ** 2))
    delta = (2.0 / residual.shape[0]) * residual[:, None]

    grad_w = [None] * len(params.weights)
    grad_b = [None] * len(params.biases)
    for index in range(last, -1, -1):
        grad_w[index] = delta.T @ activations[index]
        grad_b[index] = delta.sum(axis=0)
        if index > 0:
            delta = (delta @ params.weights[index]) * (1.0 - activations[index] ** 2)
    return loss, grad_w, grad_b


class _Adam:
    def __init__(self, params: MlpParams, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(a) for a in [*params.weights, *params.biases]]
        self.v = [np.zeros_like(a) for a in [*params.weights, *params.biases]]
        self.t = 0

    def step(self, params: MlpParams, grads: List[np.ndarray], learning_rate: float):
        self.t += 1
        correction1 = 1.0 - self.beta1 ** self.t
        correction2 = 1.0 - self.beta2 ** self.t
        for slot, (tensor, grad) in enumerate(zip([*params.weights, *params.biases], grads)):
            self.m[slot] = self.beta1 * self.m[slot] + (1.0 - self.beta1) * grad
            self.v[slot] = self.beta2 * self.v[slot] + (1.0 - self.beta2) * grad ** 2
            m_hat = self.m[slot] / correction1
            v_hat = self.v[slot] / correction2
            tensor -= learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)


def _mse(params: MlpParams, inputs: np.ndarray, targets: np.ndarray) -> float:
    return float(np.mean((forward(params, inputs) - targets) ** 2))


def train(
    dataset: Dataset,
    config: TrainingConfig,
    input_range: InputRange,
    history: Optional[TrainingHistory] = None,
) -> MlpParams:
    """Fit the surrogate with Adam on mean squared error.

    The learning rate is multiplied by decay_factor whenever the validation
    MSE has not improved for plateau_patience epochs; training stops once the
    rate would fall below min_learning_rate or the epoch budget is spent. The
    parameters with the best validation MSE are returned. Raises TrainingError
    if that MSE is above config.target_mse.
    """
    count = len(dataset)
    if count == 0:
        raise ValueError("Cannot train on an empty dataset")
    rng = np.random.default_rng(config.seed)
    order = rng.permutation(count)
    val_count = int(round(count * config.validation_split))
    if val_count == 0 or val_count == count:
        val_idx = train_idx = order
    else:
        val_idx, train_idx = order[:val_count], order[val_count:]
    train_x, train_y = dataset.inputs[train_idx], dataset.targets[train_idx]
    val_x, val_y = dataset.inputs[val_idx], dataset.targets[val_idx]

    layer_dims = (3, *config.hidden_dims, 1)
    params = init_params(input_range, config.seed, layer_dims, output_bias=float(np.mean(train_y)))
    if config.max_epochs == 0:
        logger.warning("Epoch budget is zero; returning an untrained network")
        return params

    history = history if history is not None else TrainingHistory()
    optimizer = _Adam(params)
    learning_rate = config.learning_rate
    best_params, best_val = params.copy(), _mse(params, val_x, val_y)
    stale_epochs = 0
    train_mse = best_val

    logger.info(
        f"Training {layer_dims} on {train_x.shape[0]} samples "
        f"({val_x.shape[0]} for validation), up to {config.max_epochs} epochs"
    )
    for epoch in range(1, config.max_epochs + 1):
        shuffle = rng.permutation(train_x.shape[0])
        losses = []
        for start in range(0, shuffle.shape[0], config.batch_size):
            batch = shuffle[start:start + config.batch_size]
            loss, grad_w, grad_b = _parameter_gradients(params, train_x[batch], train_y[batch])
            optimizer.step(params, [*grad_w, *grad_b], learning_rate)
            losses.append(loss * batch.shape[0])
        train_mse = sum(losses) / shuffle.shape[0]
        val_mse = _mse(params, val_x, val_y)

        history.train_mse.append(train_mse)
        history.validation_mse.append(val_mse)
        history.learning_rate.append(learning_rate)
        logger.debug(f"Epoch {epoch}: train MSE {train_mse:.3e}, validation MSE {val_mse:.3e}, lr {learning_rate:.1e}")
        if epoch % 50 == 0:
            logger.info(f"Epoch {epoch}: train MSE {train_mse:.3e}, validation MSE {val_mse:.3e}, lr {learning_rate:.1e}")

        if val_mse < best_val:
            best_params, best_val = params.copy(), val_mse
            stale_epochs = 0
        else:
            stale_epochs += 1
        if stale_epochs >= config.plateau_patience:
            learning_rate *= config.decay_factor
            stale_epochs = 0
            if learning_rate < config.min_learning_rate:
                logger.info(f"Validation MSE plateaued at epoch {epoch}; stopping")
                break
            logger.debug(f"Learning rate lowered to {learning_rate:.1e}")

    logger.info(f"Best validation MSE {best_val:.3e}")
    if best_val > config.target_mse:
        raise TrainingError(
            f"Validation MSE did not reach {config.target_mse:.1e}",
            train_mse=train_mse,
            validation_mse=best_val,
            params=best_params,
        )
    return best_params


def estimate_error_bound(
    params: MlpParams, dims: VehicleParams, count: int = 100_000, seed: int = 1
) -> ErrorBound:
    """Max and mean absolute error against the exact margin on fresh uniform samples"""
    inputs = params.trained_range.sample(count, seed)
    errors = np.abs(forward(params, inputs) - margin_targets(inputs, dims))
    bound = ErrorBound(
        epsilon_max=float(errors.max()),
        epsilon_mean=float(errors.mean()),
        eval_count=count,
        seed=seed,
        width=dims.width,
    )
    logger.info(
        f"Error bound over {count} samples: max {bound.epsilon_max:.4f} m "
        f"({bound.max_percent_of_width:.1f}% of width), mean {bound.epsilon_mean:.4f} m"
    )
    return bound


def _format_numbers(values) -> str:
    return " ".join(format(float(v), ".17g") for v in values)


def save_model(params: MlpParams, path: str):
    """Write the portable text model format"""
    lines = [
        MODEL_MAGIC,
        " ".join(str(d) for d in params.layer_dims),
        params.activation,
        _format_numbers([*params.input_offset, *params.input_scale]),
    ]
    for weight, bias in zip(params.weights, params.biases):
        rows, cols = weight.shape
        lines.append(f"layer {rows} {cols}")
        lines.extend(_format_numbers(row) for row in weight)
        lines.append(_format_numbers(bias))
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
    logger.info(f"Saved model to {path}")


def _parse_numbers(line: str, line_number: int, expected: int) -> np.ndarray:
    try:
        values = [float(token) for token in line.split()]
    except ValueError:
        raise ModelFormatError(line_number, f"expected numbers, found {line.strip()!r}")
    if len(values) != expected:
        raise ModelFormatError(line_number, f"expected {expected} numbers, found {len(values)}")
    return np.array(values)


def load_model(path: str) -> MlpParams:
    """Read a model written by save_model"""
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    cursor = 0

    def next_line() -> Tuple[str, int]:
        nonlocal cursor
        if cursor >= len(lines):
            raise ModelFormatError(cursor + 1, "unexpected end of file")
        cursor += 1
        return lines[cursor - 1], cursor

    line, number = next_line()
    if line.strip() != MODEL_MAGIC:
        raise ModelFormatError(number, f"expected {MODEL_MAGIC!r}, found {line.strip()!r}")

    line, number = next_line()
    try:
        layer_dims = tuple(int(token) for token in line.split())
    except ValueError:
        raise ModelFormatError(number, f"layer dims must be integers, found {line.strip()!r}")
    if len(layer_dims) < 2:
        raise ModelFormatError(number, "at least two layer dims are needed")

    line, number = next_line()
    activation = line.strip()
    if activation not in SUPPORTED_ACTIVATIONS:
        raise ModelFormatError(number, f"unsupported activation {activation!r}")

    line, number = next_line()
    normalization = _parse_numbers(line, number, 6)
    if np.any(normalization[:3] != 0):
        raise ModelFormatError(number, "input offset must be zero")

    weights, biases = [], []
    for index in range(len(layer_dims) - 1):
        rows, cols = layer_dims[index + 1], layer_dims[index]
        line, number = next_line()
        if line.split() != ["layer", str(rows), str(cols)]:
            raise ModelFormatError(number, f"expected 'layer {rows} {cols}', found {line.strip()!r}")
        weight = np.empty((rows, cols))
        for row in range(rows):
            line, number = next_line()
            weight[row] = _parse_numbers(line, number, cols)
        line, number = next_line()
        biases.append(_parse_numbers(line, number, rows))
        weights.append(weight)

    try:
        return MlpParams(
            layer_dims=layer_dims,
            weights=weights,
            biases=biases,
            input_offset=normalization[:3],
            input_scale=normalization[3:],
            activation=activation,
        )
    except ValueError as e:
        raise ModelFormatError(number, str(e))
