"""Two small convolutional tampering localizers with training and persistence.

Architecture A (victim) is a plain encoder/decoder; architecture B
(transfer target) adds a 5x5 stem and an additive skip path, so the two
are genuinely different functions of the input. Both map an H x W x 3
image in [0, 1] to an H x W probability map of per-pixel tampering.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionError, DomainError, ModelFormatError, TrainingError
from .metrics import binarize, f1_score

MAGIC = b"TFL1"

# layer name -> (c_in, c_out, kernel); strides and skip wiring live in
# the per-architecture forward functions below
_LAYER_SPECS = {
    "A": [
        ("conv1", 3, 8, 3),
        ("conv2", 8, 16, 3),
        ("conv3", 16, 16, 3),
        ("conv4", 16, 1, 3),
    ],
    "B": [
        ("conv1", 3, 12, 5),
        ("conv2", 12, 12, 3),
        ("conv3", 12, 24, 3),
        ("conv4", 24, 1, 3),
        ("skip", 12, 1, 1),
    ],
}


@dataclass
class TrainingConfig:
    learning_rate: float = 1e-3
    epochs: int = 30
    batch_size: int = 8
    seed: int = 0


class LocalizerModel:
    def __init__(
        self,
        architecture_id: str,
        theta: dict[str, Tensor],
        training_manifest: dict | None = None,
    ):
        self.architecture_id = architecture_id
        self.theta = theta
        self.training_manifest = training_manifest

    def predict(self, image: np.ndarray) -> np.ndarray:
        return forward(self, image)

    def __repr__(self) -> str:
        n = sum(p.data.size for p in self.theta.values())
        return f"LocalizerModel(arch={self.architecture_id!r}, params={n})"


def create_model(architecture_id: str, seed: int) -> LocalizerModel:
    """Fresh model with He-uniform weights and an output bias at the mask prior.

    Weights draw from uniform(+-sqrt(6/fan_in)), the scale that keeps
    activation variance stable through relu layers. The bias of the map
    head (conv4) starts at log(0.2/0.8), the logit of a roughly 20%
    tampered-pixel rate, so the first epochs refine features instead of
    dragging every prediction down from 0.5 on heavily skewed masks.
    """
    if architecture_id not in _LAYER_SPECS:
        raise DomainError(
            f"unknown architecture {architecture_id!r}, expected one of "
            f"{sorted(_LAYER_SPECS)}"
        )
    rng = np.random.default_rng(seed)
    theta: dict[str, Tensor] = {}
    for name, c_in, c_out, k in _LAYER_SPECS[architecture_id]:
        bound = math.sqrt(6.0 / (c_in * k * k))
        weight = rng.uniform(-bound, bound, size=(c_out, c_in, k, k)).astype(np.float32)
        theta[f"{name}.weight"] = Tensor(weight, requires_grad=True, name=f"{name}.weight")
        bias = np.zeros(c_out, dtype=np.float32)
        if name == "conv4":
            bias[:] = math.log(0.2 / 0.8)
        theta[f"{name}.bias"] = Tensor(bias, requires_grad=True, name=f"{name}.bias")
    return LocalizerModel(architecture_id, theta)


def forward_graph(model: LocalizerModel, x: Tensor) -> Tensor:
    """Differentiable forward pass on a (3, H, W) tensor -> (1, H, W) map.

    Inputs are centered to [-0.5, 0.5] first. That is equivalent to a
    fixed shift of conv1's bias, so model capacity is untouched, but it
    decorrelates the first layer's weight gradients (all-positive inputs
    force them to share a sign) and training converges far faster.
    """
    t = model.theta
    x = ad.sub(x, Tensor(np.full(x.data.shape, 0.5)))

    def conv(inp, name, stride, padding):
        return ad.conv2d(inp, t[f"{name}.weight"], t[f"{name}.bias"], stride, padding)

    if model.architecture_id == "A":
        h1 = ad.relu(conv(x, "conv1", 1, 1))
        h2 = ad.relu(conv(h1, "conv2", 2, 1))
        h3 = ad.relu(conv(h2, "conv3", 1, 1))
        pre = conv(ad.upsample_nearest2x(h3), "conv4", 1, 1)
    else:
        h1 = ad.relu(conv(x, "conv1", 1, 2))
        h2 = ad.relu(conv(h1, "conv2", 2, 1))
        h3 = ad.relu(conv(h2, "conv3", 1, 1))
        main = conv(ad.upsample_nearest2x(h3), "conv4", 1, 1)
        pre = ad.add(main, conv(h1, "skip", 1, 0))
    return ad.sigmoid(pre)


def image_to_chw(image: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(image, dtype=np.float64).transpose(2, 0, 1))


def forward(model: LocalizerModel, image: np.ndarray) -> np.ndarray:
    """Probability map for one H x W x 3 image with values in [0, 1]."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise DimensionError(f"expected an (H, W, 3) image, got shape {image.shape}")
    h, w = image.shape[:2]
    if h % 4 or w % 4:
        raise DimensionError(f"image dims must be divisible by 4, got {h}x{w}")
    if image.min() < 0.0 or image.max() > 1.0:
        raise DomainError("image values must lie in [0, 1]")
    out = forward_graph(model, Tensor(image_to_chw(image)))
    return out.data[0]


def train(
    architecture_id: str, dataset, cfg: TrainingConfig
) -> LocalizerModel:
    """Minimize mean per-pixel BCE with Adam over shuffled minibatches."""
    if cfg.learning_rate <= 0:
        raise DomainError(f"learning_rate must be positive, got {cfg.learning_rate}")
    if cfg.epochs < 1:
        raise DomainError(f"epochs must be >= 1, got {cfg.epochs}")
    if cfg.batch_size < 1:
        raise DomainError(f"batch_size must be >= 1, got {cfg.batch_size}")
    if not dataset.train_indices:
        raise DomainError("dataset has no training samples")

    model = create_model(architecture_id, seed=cfg.seed)
    optimizer = ad.Adam(model.theta, lr=cfg.learning_rate)
    shuffle_rng = np.random.default_rng(cfg.seed + 1)
    history: list[float] = []

    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(dataset.train_indices)
        epoch_total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            grads = {
                name: np.zeros(p.data.shape) for name, p in model.theta.items()
            }
            for idx in batch:
                sample = dataset.samples[idx]
                x = Tensor(image_to_chw(sample.image))
                target = Tensor(sample.mask[None].astype(np.float64))
                loss = ad.bce_loss(forward_graph(model, x), target)
                value = loss.item()
                if not math.isfinite(value):
                    raise TrainingError(
                        f"non-finite training loss at epoch {epoch} (sample {idx})"
                    )
                loss.backward()
                for name, p in model.theta.items():
                    grads[name] += p.grad
                epoch_total += value
            for name in grads:
                grads[name] /= len(batch)
            optimizer.step(grads=grads)
        history.append(epoch_total / len(order))

    val_f1 = None
    if dataset.val_indices:
        scores = []
        for idx in dataset.val_indices:
            sample = dataset.samples[idx]
            scores.append(f1_score(binarize(model.predict(sample.image)), sample.mask))
        val_f1 = float(np.mean(scores))

    model.training_manifest = {
        "dataset_seed": dataset.base_seed,
        "epochs": cfg.epochs,
        "batch_size": cfg.batch_size,
        "learning_rate": cfg.learning_rate,
        "seed": cfg.seed,
        "val_f1": val_f1,
        "loss_history": history,
    }
    return model


def save_model(model: LocalizerModel, path) -> None:
    """Binary format: magic, architecture byte, tensor count, then per
    tensor: name, rank, dims, raw little-endian float32 data."""
    blob = bytearray()
    blob += MAGIC
    blob += model.architecture_id.encode("ascii")
    blob += struct.pack("<I", len(model.theta))
    for name, p in model.theta.items():
        encoded = name.encode("utf-8")
        blob += struct.pack("<H", len(encoded))
        blob += encoded
        arr = np.ascontiguousarray(p.data, dtype="<f4")
        blob += struct.pack("<B", arr.ndim)
        for dim in arr.shape:
            blob += struct.pack("<I", dim)
        blob += arr.tobytes()
    Path(path).write_bytes(bytes(blob))


def load_model(path) -> LocalizerModel:
    data = Path(path).read_bytes()
    offset = 0

    def take(n: int, what: str) -> bytes:
        nonlocal offset
        if offset + n > len(data):
            raise ModelFormatError(
                f"truncated model file: needed {n} bytes for {what} "
                f"at byte offset {offset}, file has {len(data)}"
            )
        chunk = data[offset : offset + n]
        offset += n
        return chunk

    magic = take(4, "magic")
    if magic != MAGIC:
        raise ModelFormatError(f"bad magic {magic!r} at byte offset 0")
    arch = take(1, "architecture id").decode("ascii", errors="replace")
    if arch not in _LAYER_SPECS:
        raise ModelFormatError(f"unknown architecture byte {arch!r} at byte offset 4")
    (count,) = struct.unpack("<I", take(4, "tensor count"))
    theta: dict[str, Tensor] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2, "name length"))
        name = take(name_len, "tensor name").decode("utf-8")
        (rank,) = struct.unpack("<B", take(1, f"rank of {name}"))
        dims = tuple(
            struct.unpack("<I", take(4, f"dim {i} of {name}"))[0] for i in range(rank)
        )
        raw = take(4 * int(np.prod(dims, dtype=np.int64)), f"data of {name}")
        arr = np.frombuffer(raw, dtype="<f4").reshape(dims).copy()
        theta[name] = Tensor(arr, requires_grad=True, name=name)
    return LocalizerModel(arch, theta)
