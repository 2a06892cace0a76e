"""
Autoencoder service module.

A small convolutional autoencoder written directly in numpy. Convolutions use an im2col
layout (``sliding_window_view``) and the backward pass scatters the column gradients back
with col2im. Batches enter and leave as NHWC arrays and are NCHW inside the network.

Encoder: enc1 (stride 2, ReLU), enc2 (stride 2, ReLU), enc3 (stride 1, linear); the enc3 output
flattened in (channel, row, column) order is the latent vector. Decoder: dec1 (ReLU), x2
nearest-neighbour upsample, dec2 (ReLU), x2 upsample, dec3 (sigmoid). Every kernel is 3x3 with
padding 1.

Weights are Glorot-uniform from a PCG64 generator seeded through ``SeedSequence(seed)``; the
first spawned stream initializes parameters and the second shuffles training batches.

Functions:
    - ae_init: Builds a freshly initialized model.
    - ae_forward: Latents and reconstructions of an NHWC batch.
    - ae_loss_and_gradients: MSE loss and analytic parameter gradients.
    - ae_train: Mini-batch Adam training with a per-epoch loss trace.
    - ae_encode: Latent vector of one RGB image of any size.
    - gradient_errors: Per-array relative error of analytic against numeric gradients.
    - ae_gradient_check: Maximum relative gradient error on a seeded tiny network.
"""
import numpy as np
from loguru import logger
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from src.schemas.autoencoder import (
    AE_LAYERS,
    AeArchitecture,
    AeConfig,
    AeModel,
    DEFAULT_ARCHITECTURE,
    KERNEL,
    TINY_ARCHITECTURE,
)
from src.services.errors import EmptyDataset, NonFiniteLoss, ShapeMismatch
from src.services.raster import RgbImage, resize_bilinear

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8
FD_STEP = 1e-5
KINK_MARGIN = 1e-3
MAX_REDRAWS = 100


def _streams(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    init_seed, shuffle_seed = np.random.SeedSequence(seed).spawn(2)
    return np.random.Generator(np.random.PCG64(init_seed)), np.random.Generator(np.random.PCG64(shuffle_seed))


def ae_init(config: AeConfig | None = None, architecture: AeArchitecture = DEFAULT_ARCHITECTURE) -> AeModel:
    """
    Initializes the network: weights uniform in +-sqrt(6 / (fan_in + fan_out)), biases zero.

    :param config: Supplies the seed.
    :type config: AeConfig | None
    :param architecture: The network shape.
    :type architecture: AeArchitecture
    :return: The new model.
    :rtype: AeModel
    """
    config = config or AeConfig()
    rng, _ = _streams(config.seed)
    params = {}
    for name, shape in architecture.weight_shapes().items():
        if name.endswith(".bias"):
            params[name] = np.zeros(shape)
            continue
        out_channels, in_channels = shape[0], shape[1]
        limit = np.sqrt(6.0 / ((in_channels + out_channels) * KERNEL * KERNEL))
        params[name] = rng.uniform(-limit, limit, size=shape)
    return AeModel(architecture=architecture, params=params)


def _conv_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray, stride: int):
    batch, channels, height, width = x.shape
    padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    windows = sliding_window_view(padded, (KERNEL, KERNEL), axis=(2, 3))[:, :, ::stride, ::stride]
    out_h, out_w = windows.shape[2], windows.shape[3]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(batch * out_h * out_w, channels * KERNEL * KERNEL)
    out = cols @ weight.reshape(weight.shape[0], -1).T + bias
    out = out.reshape(batch, out_h, out_w, -1).transpose(0, 3, 1, 2)
    return out, (cols, x.shape, stride, out_h, out_w)


def _conv_backward(grad_out: np.ndarray, weight: np.ndarray, cache):
    cols, input_shape, stride, out_h, out_w = cache
    batch, channels, height, width = input_shape
    grad_flat = grad_out.transpose(0, 2, 3, 1).reshape(batch * out_h * out_w, -1)
    grad_weight = (grad_flat.T @ cols).reshape(weight.shape)
    grad_bias = grad_flat.sum(axis=0)
    grad_cols = (grad_flat @ weight.reshape(weight.shape[0], -1)).reshape(batch, out_h, out_w, channels, KERNEL, KERNEL)
    grad_padded = np.zeros((batch, channels, height + 2, width + 2))
    for i in range(KERNEL):
        for j in range(KERNEL):
            grad_padded[:, :, i:i + stride * out_h:stride, j:j + stride * out_w:stride] += \
                grad_cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return grad_padded[:, :, 1:-1, 1:-1], grad_weight, grad_bias


def _activate(pre: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(pre, 0.0)
    if activation == "sigmoid":
        return expit(pre)
    return pre


def _upsample(x: np.ndarray) -> np.ndarray:
    return x.repeat(2, axis=2).repeat(2, axis=3)


def _upsample_backward(grad: np.ndarray) -> np.ndarray:
    batch, channels, height, width = grad.shape
    return grad.reshape(batch, channels, height // 2, 2, width // 2, 2).sum(axis=(3, 5))


def _check_batch(model: AeModel, batch: np.ndarray) -> np.ndarray:
    arch = model.architecture
    expected = (arch.input_size, arch.input_size, arch.channels)
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 4 or batch.shape[1:] != expected:
        raise ShapeMismatch(f"{ShapeMismatch.detail}: expected (N, {expected[0]}, {expected[1]}, {expected[2]}), "
                            f"got {batch.shape}")
    return batch


def _run(model: AeModel, x: np.ndarray, decode: bool = True):
    """Forward pass on an NCHW batch, returning latent, reconstruction and the backward caches."""
    caches = []
    h = x
    latent = None
    for name, _, _, stride, activation in AE_LAYERS:
        if name in ("dec2", "dec3"):
            h = _upsample(h)
        pre, conv_cache = _conv_forward(h, model.params[f"{name}.weight"], model.params[f"{name}.bias"], stride)
        h = _activate(pre, activation)
        caches.append((name, activation, pre, h, conv_cache))
        if name == "enc3":
            latent = h.reshape(h.shape[0], -1)
            if not decode:
                return latent, None, caches
    return latent, h, caches


def ae_forward(model: AeModel, batch: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Runs the network on an NHWC batch.

    :param model: The autoencoder.
    :type model: AeModel
    :param batch: Inputs in [0, 1], shape (N, size, size, channels).
    :type batch: np.ndarray
    :return: Latents (N, latent_dim) and reconstructions with the input shape.
    :rtype: tuple[np.ndarray, np.ndarray]
    :raises ShapeMismatch: The batch shape does not match the architecture.
    """
    batch = _check_batch(model, batch)
    latent, reconstruction, _ = _run(model, batch.transpose(0, 3, 1, 2))
    return latent, reconstruction.transpose(0, 2, 3, 1)


def ae_loss_and_gradients(model: AeModel, batch: np.ndarray) -> tuple[float, dict[str, np.ndarray]]:
    """
    Mean squared reconstruction error of an NHWC batch and its gradient for every parameter.

    :param model: The autoencoder.
    :type model: AeModel
    :param batch: Inputs of shape (N, size, size, channels).
    :type batch: np.ndarray
    :return: The loss and a gradient array per parameter name.
    :rtype: tuple[float, dict[str, np.ndarray]]
    """
    batch = _check_batch(model, batch)
    x = batch.transpose(0, 3, 1, 2)
    _, reconstruction, caches = _run(model, x)
    diff = reconstruction - x
    loss = float(np.mean(diff * diff))

    grads = {}
    grad = 2.0 * diff / diff.size
    for name, activation, pre, out, conv_cache in reversed(caches):
        if activation == "sigmoid":
            grad = grad * out * (1.0 - out)
        elif activation == "relu":
            grad = grad * (pre > 0.0)
        grad, grads[f"{name}.weight"], grads[f"{name}.bias"] = _conv_backward(
            grad, model.params[f"{name}.weight"], conv_cache)
        if name in ("dec2", "dec3"):
            grad = _upsample_backward(grad)
    return loss, grads


class AdamState:
    """First and second moment estimates of the Adam optimizer."""

    def __init__(self, params: dict[str, np.ndarray], learning_rate: float):
        self.learning_rate = learning_rate
        self.step_count = 0
        self.m = {name: np.zeros_like(value) for name, value in params.items()}
        self.v = {name: np.zeros_like(value) for name, value in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        """Updates ``params`` in place."""
        self.step_count += 1
        correction1 = 1.0 - ADAM_BETA1 ** self.step_count
        correction2 = 1.0 - ADAM_BETA2 ** self.step_count
        for name in sorted(params):
            g = grads[name]
            self.m[name] = ADAM_BETA1 * self.m[name] + (1.0 - ADAM_BETA1) * g
            self.v[name] = ADAM_BETA2 * self.v[name] + (1.0 - ADAM_BETA2) * g * g
            m_hat = self.m[name] / correction1
            v_hat = self.v[name] / correction2
            params[name] -= self.learning_rate * m_hat / (np.sqrt(v_hat) + ADAM_EPSILON)


def ae_train(model: AeModel, dataset: np.ndarray, config: AeConfig,
             corpus_hash: str = "") -> tuple[AeModel, list[float]]:
    """
    Trains by mini-batch Adam on the mean squared reconstruction error. The input model is not modified.

    :param model: The starting model.
    :type model: AeModel
    :param dataset: NHWC inputs in [0, 1].
    :type dataset: np.ndarray
    :param config: Seed, learning rate, batch size and epochs.
    :type config: AeConfig
    :param corpus_hash: Recorded on the returned model.
    :type corpus_hash: str
    :return: The trained model and the per-epoch mean MSE.
    :rtype: tuple[AeModel, list[float]]
    :raises EmptyDataset: No training inputs.
    :raises NonFiniteLoss: The loss became NaN or infinite.
    """
    if len(dataset) == 0:
        raise EmptyDataset()
    dataset = _check_batch(model, dataset)
    _, rng = _streams(config.seed)
    trained = AeModel(architecture=model.architecture, params=model.copy_params(), corpus_hash=corpus_hash)
    adam = AdamState(trained.params, config.learning_rate)
    n = len(dataset)
    trace = []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            batch = dataset[order[start:start + config.batch_size]]
            loss, grads = ae_loss_and_gradients(trained, batch)
            if not np.isfinite(loss):
                raise NonFiniteLoss(f"{NonFiniteLoss.detail} (epoch {epoch}, batch at {start})")
            adam.step(trained.params, grads)
            total += loss * len(batch)
        trace.append(total / n)
        logger.debug(f"epoch {epoch}: mse {trace[-1]:.6f}")
    logger.info(f"autoencoder trained on {n} icons for {config.epochs} epochs, final mse {trace[-1]:.6f}")
    return trained, trace


def ae_encode_batch(model: AeModel, images: list[RgbImage]) -> np.ndarray:
    """Latent vectors of RGB images of any size, resized to the model input first."""
    size = model.architecture.input_size
    batch = np.stack([resize_bilinear(image, size, size) for image in images])
    batch = _check_batch(model, batch)
    latent, _, _ = _run(model, batch.transpose(0, 3, 1, 2), decode=False)
    return latent


def ae_encode(model: AeModel, icon: RgbImage) -> np.ndarray:
    """
    Latent vector of one RGB image.

    :param model: The autoencoder.
    :type model: AeModel
    :param icon: RGB image in [0, 1] of any size.
    :type icon: RgbImage
    :return: The latent vector (512 entries for the default architecture).
    :rtype: np.ndarray
    """
    return ae_encode_batch(model, [icon])[0]


def gradient_errors(model: AeModel, batch: np.ndarray, step: float = FD_STEP) -> dict[str, float]:
    """
    Compares analytic gradients with central finite differences.

    :param model: The network, parameters are restored after each perturbation.
    :type model: AeModel
    :param batch: NHWC inputs.
    :type batch: np.ndarray
    :param step: Finite-difference step.
    :type step: float
    :return: Per parameter name, max over entries of ``|ga - gn| / max(1, |ga|, |gn|)``.
    :rtype: dict[str, float]
    """
    _, analytic = ae_loss_and_gradients(model, batch)
    errors = {}
    for name in sorted(model.params):
        values = model.params[name]
        worst = 0.0
        for index in np.ndindex(values.shape):
            original = values[index]
            values[index] = original + step
            plus, _ = ae_loss_and_gradients(model, batch)
            values[index] = original - step
            minus, _ = ae_loss_and_gradients(model, batch)
            values[index] = original
            numeric = (plus - minus) / (2.0 * step)
            exact = analytic[name][index]
            worst = max(worst, abs(exact - numeric) / max(1.0, abs(exact), abs(numeric)))
        errors[name] = worst
    return errors


def _kink_distance(model: AeModel, batch: np.ndarray) -> float:
    """Smallest |pre-activation| over the ReLU layers."""
    _, _, caches = _run(model, batch.transpose(0, 3, 1, 2))
    return min(float(np.abs(pre).min()) for _, activation, pre, _, _ in caches if activation == "relu")


def ae_gradient_check(architecture: AeArchitecture = TINY_ARCHITECTURE, seed: int = 0, batch_size: int = 2) -> float:
    """
    Maximum relative gradient error of a seeded network on a seeded random batch.

    Biases are drawn in [0.05, 0.25] instead of zero, and the draw is repeated until every ReLU
    pre-activation lies at least ``KINK_MARGIN`` away from 0, so no finite-difference step
    crosses the kink.

    :param architecture: The network shape, tiny by default.
    :type architecture: AeArchitecture
    :param seed: Seeds both the parameters and the batch.
    :type seed: int
    :param batch_size: Number of random inputs.
    :type batch_size: int
    :return: The maximum relative error over every parameter.
    :rtype: float
    """
    model = ae_init(AeConfig(seed=seed), architecture)
    rng = np.random.Generator(np.random.PCG64(seed))
    shape = (batch_size, architecture.input_size, architecture.input_size, architecture.channels)
    batch = rng.uniform(0.0, 1.0, size=shape)
    for _ in range(MAX_REDRAWS):
        for name in model.params:
            if name.endswith(".bias"):
                model.params[name] = rng.uniform(0.05, 0.25, size=model.params[name].shape)
        if _kink_distance(model, batch) >= KINK_MARGIN:
            break
        batch = rng.uniform(0.0, 1.0, size=shape)
    else:
        logger.warning(f"gradient check point stays within {KINK_MARGIN} of a ReLU kink")
    return max(gradient_errors(model, batch).values())
