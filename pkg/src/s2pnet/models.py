"""Model assembly, the training loop, and checkpoint persistence.

Two architectures are provided: a tiny MLP classifier fed by the
rotation-invariant spectral front end, and a conventional CNN baseline that
consumes raw 128x128 images.
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .spectral import PolarGrid, build_polar_grid, extract_features

CHECKPOINT_MAGIC = b"S2PC"
CHECKPOINT_VERSION = 1


class FormatError(ValueError):
    """Raised for malformed checkpoint files."""


class Model:
    """Ordered layer stack with an optional polar-spectral front end."""

    def __init__(self, name: str, num_classes: int, layers: list[nn.Layer],
                 grid: PolarGrid | None = None):
        self.name = name
        self.num_classes = num_classes
        self.layers = layers
        self.grid = grid

    # -- mode & parameter bookkeeping ------------------------------------

    def train(self) -> None:
        for layer in self.layers:
            layer.training = True

    def eval(self) -> None:
        for layer in self.layers:
            layer.training = False

    def set_dropout_rng(self, rng: np.random.Generator) -> None:
        for layer in self.layers:
            if isinstance(layer, nn.Dropout):
                layer.rng = rng

    def parameters(self) -> dict[str, np.ndarray]:
        return {f"layers.{i}.{k}": v for i, layer in enumerate(self.layers)
                for k, v in layer.params.items()}

    def gradients(self) -> dict[str, np.ndarray]:
        return {f"layers.{i}.{k}": v for i, layer in enumerate(self.layers)
                for k, v in layer.grads.items()}

    def buffers(self) -> dict[str, np.ndarray]:
        return {f"layers.{i}.{k}": v for i, layer in enumerate(self.layers)
                for k, v in layer.buffers.items()}

    def param_count(self) -> int:
        return sum(layer.param_count() for layer in self.layers)

    @property
    def dtype(self):
        return next(iter(self.parameters().values())).dtype

    # -- forward / backward ----------------------------------------------

    def forward(self, x: np.ndarray) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, grad: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def input_batch(self, images) -> np.ndarray:
        """Stack raw images into a model input batch, running the spectral
        front end when one is attached."""
        if self.grid is not None:
            return np.stack([extract_features(img, self.grid) for img in images]).astype(self.dtype)
        return np.stack([np.asarray(img) for img in images])[:, None, :, :].astype(self.dtype)


def build_s2p_classifier(num_classes: int, seed: int = 0, dtype=np.float32,
                         dropout: tuple[float, float] = (0.3, 0.2)) -> Model:
    """Spectral front end + 64 -> 64 -> 32 -> C MLP head (6,564 params at C=4)."""
    if num_classes < 2:
        raise ValueError("need at least 2 classes")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    layers = [
        nn.Linear(64, 64, rng, dtype), nn.BatchNorm(64, dtype=dtype), nn.ReLU(), nn.Dropout(dropout[0]),
        nn.Linear(64, 32, rng, dtype), nn.BatchNorm(32, dtype=dtype), nn.ReLU(), nn.Dropout(dropout[1]),
        nn.Linear(32, num_classes, rng, dtype),
    ]
    return Model("s2p", num_classes, layers, grid=build_polar_grid())


def build_simple_cnn(num_classes: int, seed: int = 0, dtype=np.float32) -> Model:
    """Three conv blocks (1 -> 16 -> 32 -> 64) and a 128-unit MLP head
    (2,121,316 params at C=4) on raw 128x128 single-channel input."""
    if num_classes < 2:
        raise ValueError("need at least 2 classes")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    layers = []
    c_in = 1
    for c_out in (16, 32, 64):
        layers += [nn.Conv3x3(c_in, c_out, rng, dtype), nn.BatchNorm(c_out, spatial=True, dtype=dtype),
                   nn.ReLU(), nn.MaxPool2x2()]
        c_in = c_out
    layers += [nn.Flatten(),
               nn.Linear(64 * 16 * 16, 128, rng, dtype), nn.ReLU(), nn.Dropout(0.4),
               nn.Linear(128, num_classes, rng, dtype)]
    return Model("cnn", num_classes, layers)


def predict(model: Model, img: np.ndarray) -> tuple[int, np.ndarray]:
    """Eval-mode class prediction for a single image. Argmax ties resolve
    to the lowest class id."""
    img = np.asarray(img, dtype=np.float64)
    expected = model.grid.side if model.grid is not None else 128
    if img.shape != (expected, expected):
        raise ValueError(f"expected {expected}x{expected} image, got {img.shape}")
    model.eval()
    logits = model.forward(model.input_batch([img]))[0]
    return int(np.argmax(logits)), logits


def grad_check_model(model: Model, x: np.ndarray, labels: np.ndarray,
                     loss_fn=nn.softmax_ce_loss, h: float = 1e-5) -> float:
    """Finite-difference check of every model parameter in train mode.

    Rejects models with active (p > 0) dropout: the stochastic mask would
    make the loss non-deterministic between probes.
    """
    for layer in model.layers:
        if isinstance(layer, nn.Dropout) and layer.p > 0.0:
            raise ValueError("grad_check requires dropout-free models (train-mode dropout is stochastic)")
    model.train()

    def forward_fn():
        logits = model.forward(x)
        loss, grad = loss_fn(logits, labels)
        model.backward(grad)
        return loss, model.gradients()

    return nn.grad_check(forward_fn, model.parameters(), h=h)


# -- training -------------------------------------------------------------

@dataclass
class TrainConfig:
    epochs_max: int = 200
    batch: int = 16
    patience: int = 30
    lr: float = 1e-3
    weight_decay: float = 1e-3
    loss: str = "focal"  # "focal" or "ce"
    focal_gamma: float = 2.0
    augment_factor: int = 50
    rotation_augment: bool = False
    seed: int = 0
    min_delta: float = 1e-4
    t0: int = 20
    t_mult: int = 2

    def __post_init__(self):
        if self.loss not in ("focal", "ce"):
            raise ValueError(f"unknown loss {self.loss!r}")
        for name in ("epochs_max", "batch", "patience", "augment_factor"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")


@dataclass
class Checkpoint:
    model_name: str
    num_classes: int
    tensors: dict[str, np.ndarray]
    history: list[dict] = field(default_factory=list)
    extra: dict = field(default_factory=dict)
    version: int = CHECKPOINT_VERSION


def train(model: Model, split, config: TrainConfig, aug_config=None) -> Checkpoint:
    """Train on ``split.train`` with on-the-fly augmentation.

    Each epoch streams ``augment_factor`` variants per training image
    (variant 0 is the original), reshuffled per epoch. Early stopping
    monitors mean epoch training loss with min-delta ``config.min_delta``;
    the lowest-loss parameters are restored at the end.
    """
    from .data import augment  # local import: data does not depend on models

    if not split.train:
        raise ValueError("empty training split")
    if config.loss == "focal":
        loss_fn = lambda z, y: nn.focal_loss(z, y, config.focal_gamma)
    else:
        loss_fn = nn.softmax_ce_loss

    opt = nn.AdamW(model.parameters(), lr=config.lr, weight_decay=config.weight_decay)
    model.set_dropout_rng(np.random.default_rng(np.random.SeedSequence([config.seed, 0xD0])))
    model.train()

    n_train = len(split.train)
    n_stream = n_train * config.augment_factor
    history: list[dict] = []
    best_loss = np.inf
    best_state = None
    stall_reference = np.inf
    stalled = 0

    for epoch in range(config.epochs_max):
        opt.lr = nn.cosine_wr_lr(epoch, eta_max=config.lr, t0=config.t0, t_mult=config.t_mult)
        order_rng = np.random.default_rng(np.random.SeedSequence([config.seed, epoch, 0x5F]))
        order = order_rng.permutation(n_stream)

        def sample(stream_idx: int):
            img_idx, variant = divmod(int(stream_idx), config.augment_factor)
            item = split.train[img_idx]
            if variant == 0 or aug_config is None:
                return item.image, item.label
            rng = np.random.default_rng(np.random.SeedSequence([config.seed, epoch, img_idx, variant]))
            return augment(item.image, aug_config, rng), item.label

        total = 0.0
        seen = 0
        for start in range(0, n_stream, config.batch):
            batch_idx = order[start : start + config.batch]
            if batch_idx.size < 2:
                continue  # batchnorm needs at least 2 samples
            images, labels = zip(*(sample(i) for i in batch_idx))
            x = model.input_batch(images)
            logits = model.forward(x)
            loss, grad = loss_fn(logits, np.asarray(labels))
            if not np.isfinite(loss):
                raise nn.DivergenceError(f"non-finite loss at epoch {epoch}")
            model.backward(grad)
            opt.step(model.gradients())
            total += loss * batch_idx.size
            seen += batch_idx.size

        epoch_loss = total / seen
        history.append({"epoch": epoch, "loss": float(epoch_loss), "lr": float(opt.lr)})

        if epoch_loss < best_loss:
            best_loss = epoch_loss
            best_state = {k: v.copy() for k, v in {**model.parameters(), **model.buffers()}.items()}
        if stall_reference - epoch_loss >= config.min_delta:
            stalled = 0
        else:
            stalled += 1
            if stalled >= config.patience:
                break
        stall_reference = min(stall_reference, epoch_loss)

    # Restore the best-loss parameters before snapshotting.
    live = {**model.parameters(), **model.buffers()}
    for k, v in best_state.items():
        live[k][...] = v
    model.eval()
    return checkpoint_from_model(model, history=history)


def checkpoint_from_model(model: Model, history=None, extra=None) -> Checkpoint:
    tensors = {k: np.asarray(v, dtype=np.float32) for k, v in
               {**model.parameters(), **model.buffers()}.items()}
    return Checkpoint(model_name=model.name, num_classes=model.num_classes,
                      tensors=tensors, history=list(history or []), extra=dict(extra or {}))


def apply_checkpoint(model: Model, ckpt: Checkpoint) -> Model:
    """Load checkpoint tensors into ``model``; shapes must match exactly."""
    live = {**model.parameters(), **model.buffers()}
    if set(live) != set(ckpt.tensors):
        raise ValueError("checkpoint tensor names do not match the model")
    for name, value in ckpt.tensors.items():
        if live[name].shape != value.shape:
            raise ValueError(f"shape mismatch for {name}: model {live[name].shape}, checkpoint {value.shape}")
        live[name][...] = value.astype(live[name].dtype)
    return model


def build_from_checkpoint(ckpt: Checkpoint, seed: int = 0) -> Model:
    if ckpt.model_name == "s2p":
        model = build_s2p_classifier(ckpt.num_classes, seed=seed)
    elif ckpt.model_name == "cnn":
        model = build_simple_cnn(ckpt.num_classes, seed=seed)
    else:
        raise FormatError(f"unknown model name {ckpt.model_name!r}")
    return apply_checkpoint(model, ckpt)


# -- checkpoint wire format ------------------------------------------------
#
#   "S2PC" | u16 version | u16 name_len, name | u16 num_classes
#   u32 n_records | records: (u16 name_len, name | u8 ndim | ndim*u32 dims
#   | float32 LE data) | u64 trailer_len | JSON trailer (history + extra)
#
# All integers little-endian.

def save_checkpoint(ckpt: Checkpoint, path) -> None:
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<H", ckpt.version))
    name = ckpt.model_name.encode()
    buf.write(struct.pack("<H", len(name)))
    buf.write(name)
    buf.write(struct.pack("<H", ckpt.num_classes))
    buf.write(struct.pack("<I", len(ckpt.tensors)))
    for tname, value in ckpt.tensors.items():
        raw = tname.encode()
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", value.ndim))
        buf.write(struct.pack(f"<{value.ndim}I", *value.shape))
        buf.write(np.ascontiguousarray(value, dtype="<f4").tobytes())
    trailer = json.dumps({"history": ckpt.history, "extra": ckpt.extra}).encode()
    buf.write(struct.pack("<Q", len(trailer)))
    buf.write(trailer)
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def _read(f, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise FormatError(f"truncated checkpoint: expected {n} bytes for {what} at offset {f.tell() - len(data)}")
    return data


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        if _read(f, 4, "magic") != CHECKPOINT_MAGIC:
            raise FormatError("bad magic bytes (not a checkpoint file)")
        (version,) = struct.unpack("<H", _read(f, 2, "version"))
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        (name_len,) = struct.unpack("<H", _read(f, 2, "name length"))
        model_name = _read(f, name_len, "model name").decode()
        (num_classes,) = struct.unpack("<H", _read(f, 2, "class count"))
        (n_records,) = struct.unpack("<I", _read(f, 4, "record count"))
        tensors: dict[str, np.ndarray] = {}
        for _ in range(n_records):
            (tn_len,) = struct.unpack("<H", _read(f, 2, "tensor name length"))
            tname = _read(f, tn_len, "tensor name").decode()
            (ndim,) = struct.unpack("<B", _read(f, 1, "tensor rank"))
            shape = struct.unpack(f"<{ndim}I", _read(f, 4 * ndim, "tensor shape"))
            count = int(np.prod(shape)) if ndim else 1
            data = _read(f, 4 * count, f"tensor data for {tname}")
            tensors[tname] = np.frombuffer(data, dtype="<f4").reshape(shape).copy()
        (trailer_len,) = struct.unpack("<Q", _read(f, 8, "trailer length"))
        try:
            trailer = json.loads(_read(f, trailer_len, "JSON trailer").decode())
        except json.JSONDecodeError as exc:
            raise FormatError(f"corrupt JSON trailer: {exc}") from exc
    return Checkpoint(model_name=model_name, num_classes=num_classes, tensors=tensors,
                      history=trailer.get("history", []), extra=trailer.get("extra", {}),
                      version=version)
