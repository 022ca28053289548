"""1-D vision transformer for ECG windows: patch embedding, cls token,
learnable positions, pre-norm attention/FFN layers with stochastic depth,
a linear classifier head, and an optional known/unknown discriminator MLP.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint as ckpt
from .errors import ConfigError, NumericsError, ShapeError
from .metrics import macro_f1
from .optim import LrSchedule, OptimizerState, adamw_step, cosine_lr
from .seeding import derive_seed
from .signal import AugmentSpec, Window, augment
from .tensor import Tensor, cross_entropy, layer_norm


@dataclass
class ViTConfig:
    window_len: int = 2000
    patch_size: int = 20
    embed_dim: int = 256
    num_layers: int = 6
    num_heads: int = 8
    mlp_dim: int = 128
    survival_prob: float = 0.8
    num_classes: int = 2

    def __post_init__(self):
        for name in ("window_len", "patch_size", "embed_dim", "num_layers",
                     "num_heads", "mlp_dim", "num_classes"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.window_len % self.patch_size != 0:
            raise ConfigError(
                f"window_len {self.window_len} must be divisible by patch_size {self.patch_size}"
            )
        if self.embed_dim % self.num_heads != 0:
            raise ConfigError(
                f"embed_dim {self.embed_dim} must be divisible by num_heads {self.num_heads}"
            )
        if not 0.0 < self.survival_prob <= 1.0:
            raise ConfigError(f"survival_prob must lie in (0,1], got {self.survival_prob}")

    @property
    def num_patches(self) -> int:
        return self.window_len // self.patch_size

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.num_heads

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "ViTConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def _uniform_init(rng, shape, fan_in):
    s = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-s, s, size=shape)


def init_vit_params(config: ViTConfig, seed: int) -> dict[str, Tensor]:
    """All learnable tensors, named. Linear weights are uniform(-1/sqrt(fan_in));
    cls token and position table are uniform(-0.02, 0.02); biases and layer-norm
    offsets start at zero, gains at one."""
    rng = np.random.default_rng(seed)
    d, p = config.embed_dim, config.patch_size
    n_tokens = config.num_patches + 1
    params: dict[str, np.ndarray] = {}
    params["patch.w"] = _uniform_init(rng, (d, p), p)
    params["patch.b"] = np.zeros(d)
    params["cls"] = rng.uniform(-0.02, 0.02, size=d)
    params["pos"] = rng.uniform(-0.02, 0.02, size=(n_tokens, d))
    for i in range(config.num_layers):
        prefix = f"layer{i}."
        params[prefix + "ln1.g"] = np.ones(d)
        params[prefix + "ln1.b"] = np.zeros(d)
        for name in ("wq", "wk", "wv", "wo"):
            params[prefix + name] = _uniform_init(rng, (d, d), d)
        params[prefix + "ln2.g"] = np.ones(d)
        params[prefix + "ln2.b"] = np.zeros(d)
        params[prefix + "ffn.w1"] = _uniform_init(rng, (config.mlp_dim, d), d)
        params[prefix + "ffn.b1"] = np.zeros(config.mlp_dim)
        params[prefix + "ffn.w2"] = _uniform_init(rng, (d, config.mlp_dim), config.mlp_dim)
        params[prefix + "ffn.b2"] = np.zeros(d)
    params["head.w"] = _uniform_init(rng, (config.num_classes, d), d)
    params["head.b"] = np.zeros(config.num_classes)
    return {name: Tensor(arr, requires_grad=True) for name, arr in params.items()}


def clone_params(params: dict[str, Tensor]) -> dict[str, Tensor]:
    return {name: Tensor(t.data.copy(), requires_grad=True) for name, t in params.items()}


def patch_embed(x: Tensor, params: dict[str, Tensor], config: ViTConfig) -> Tensor:
    """(B, L) windows -> (B, N, d) tokens, token_i = W_p @ patch_i + b_p."""
    batch, length = x.shape
    if length != config.window_len:
        raise ConfigError(
            f"window length {length} does not match configured {config.window_len}"
        )
    patches = x.reshape(batch, config.num_patches, config.patch_size)
    return patches @ params["patch.w"].transpose((1, 0)) + params["patch.b"]


def add_cls_and_positions(tokens: Tensor, params: dict[str, Tensor]) -> Tensor:
    """Prepend the cls token at index 0 and add the positional table."""
    batch, n, d = tokens.shape
    cls = params["cls"].reshape(1, 1, d).broadcast_to((batch, 1, d))
    return Tensor.concat([cls, tokens], axis=1) + params["pos"]


def mhsa(z: Tensor, layer_params: dict[str, Tensor], config: ViTConfig) -> Tensor:
    """Multi-head self-attention with row-stochastic attention per head."""
    batch, n_tok, d = z.shape
    h, k = config.num_heads, config.head_dim

    def split_heads(t: Tensor) -> Tensor:
        return t.reshape(batch, n_tok, h, k).transpose((0, 2, 1, 3))

    q = split_heads(z @ layer_params["wq"].transpose((1, 0)))
    key = split_heads(z @ layer_params["wk"].transpose((1, 0)))
    v = split_heads(z @ layer_params["wv"].transpose((1, 0)))
    scores = (q @ key.transpose((0, 1, 3, 2))) * (1.0 / np.sqrt(k))
    attn = scores.softmax(axis=-1)
    context = (attn @ v).transpose((0, 2, 1, 3)).reshape(batch, n_tok, d)
    return context @ layer_params["wo"].transpose((1, 0))


def attention_maps(z: np.ndarray, layer_params: dict[str, Tensor],
                   config: ViTConfig) -> np.ndarray:
    """(B, H, T, T) attention matrices for inspection/tests (no grad)."""
    zt = Tensor(z)
    batch, n_tok, d = zt.shape
    h, k = config.num_heads, config.head_dim
    q = (zt @ layer_params["wq"].transpose((1, 0))).data.reshape(batch, n_tok, h, k).transpose(0, 2, 1, 3)
    key = (zt @ layer_params["wk"].transpose((1, 0))).data.reshape(batch, n_tok, h, k).transpose(0, 2, 1, 3)
    scores = Tensor(np.matmul(q, key.transpose(0, 1, 3, 2)) / np.sqrt(k))
    return scores.softmax(axis=-1).data


def _ffn(z: Tensor, layer_params: dict[str, Tensor]) -> Tensor:
    hidden = (z @ layer_params["ffn.w1"].transpose((1, 0)) + layer_params["ffn.b1"]).gelu()
    return hidden @ layer_params["ffn.w2"].transpose((1, 0)) + layer_params["ffn.b2"]


def _drop_path_mask(batch: int, survival_prob: float, training: bool,
                    rng: np.random.Generator | None):
    """Inverted-scaling stochastic depth: None means keep the branch as-is."""
    if not training or survival_prob >= 1.0:
        return None
    if rng is None:
        raise ConfigError("training-mode forward with survival_prob < 1 needs an rng")
    survive = rng.uniform(size=batch) < survival_prob
    return (survive / survival_prob).reshape(batch, 1, 1)


def transformer_layer(z: Tensor, layer_params: dict[str, Tensor], config: ViTConfig,
                      training: bool = False,
                      rng: np.random.Generator | None = None) -> Tensor:
    """Pre-norm residual block: z + drop(mhsa(LN(z))), then + drop(FFN(LN(.)))."""
    batch = z.shape[0]
    branch = mhsa(layer_norm(z, layer_params["ln1.g"], layer_params["ln1.b"]),
                  layer_params, config)
    mask = _drop_path_mask(batch, config.survival_prob, training, rng)
    if mask is not None:
        branch = branch * Tensor(mask)
    z = z + branch
    branch = _ffn(layer_norm(z, layer_params["ln2.g"], layer_params["ln2.b"]), layer_params)
    mask = _drop_path_mask(batch, config.survival_prob, training, rng)
    if mask is not None:
        branch = branch * Tensor(mask)
    return z + branch


def _layer_params(params: dict[str, Tensor], i: int) -> dict[str, Tensor]:
    prefix = f"layer{i}."
    return {name[len(prefix):]: t for name, t in params.items() if name.startswith(prefix)}


def vit_encode(x, params: dict[str, Tensor], config: ViTConfig,
               training: bool = False,
               rng: np.random.Generator | None = None) -> Tensor:
    """Forward through the encoder; returns the final cls embedding (B, d)."""
    arr = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    squeeze = arr.ndim == 1
    if squeeze:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ShapeError(f"expected (B, L) or (L,) input, got shape {arr.shape}")
    z = add_cls_and_positions(patch_embed(Tensor(arr) if not isinstance(x, Tensor) or squeeze else x,
                                          params, config), params)
    for i in range(config.num_layers):
        z = transformer_layer(z, _layer_params(params, i), config, training, rng)
        if np.isnan(z.data).any():
            raise NumericsError(f"NaN activation in transformer layer {i}")
    return z[:, 0, :]


def vit_forward(x, params: dict[str, Tensor], config: ViTConfig,
                training: bool = False,
                rng: np.random.Generator | None = None) -> Tensor:
    """Logits of shape (B, C); a single (L,) window yields shape (C,)."""
    arr = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    squeeze = arr.ndim == 1
    cls_final = vit_encode(x, params, config, training, rng)
    logits = cls_final @ params["head.w"].transpose((1, 0)) + params["head.b"]
    if np.isnan(logits.data).any():
        raise NumericsError("NaN activation in classifier head")
    return logits[0] if squeeze else logits


# ---------------------------------------------------------------------------
# discriminator MLP (optional known/unknown gate)
# ---------------------------------------------------------------------------

DISCRIMINATOR_HIDDEN = 128
DISCRIMINATOR_DROPOUT = 0.3
_BN_MOMENTUM = 0.1
_BN_EPS = 1e-5


@dataclass
class DiscriminatorParams:
    w1: Tensor
    b1: Tensor
    bn_gain: Tensor
    bn_bias: Tensor
    w2: Tensor
    b2: Tensor
    running_mean: np.ndarray = field(repr=False, default=None)
    running_var: np.ndarray = field(repr=False, default=None)
    dropout_prob: float = DISCRIMINATOR_DROPOUT

    def named_tensors(self) -> dict[str, Tensor]:
        return {"w1": self.w1, "b1": self.b1, "bn_gain": self.bn_gain,
                "bn_bias": self.bn_bias, "w2": self.w2, "b2": self.b2}


def init_discriminator_params(embed_dim: int, seed: int,
                              hidden: int = DISCRIMINATOR_HIDDEN) -> DiscriminatorParams:
    rng = np.random.default_rng(seed)
    return DiscriminatorParams(
        w1=Tensor(_uniform_init(rng, (hidden, embed_dim), embed_dim), requires_grad=True),
        b1=Tensor(np.zeros(hidden), requires_grad=True),
        bn_gain=Tensor(np.ones(hidden), requires_grad=True),
        bn_bias=Tensor(np.zeros(hidden), requires_grad=True),
        w2=Tensor(_uniform_init(rng, (2, hidden), hidden), requires_grad=True),
        b2=Tensor(np.zeros(2), requires_grad=True),
        running_mean=np.zeros(hidden),
        running_var=np.ones(hidden),
    )


def discriminator_forward(embedding, params: DiscriminatorParams,
                          training: bool = False,
                          rng: np.random.Generator | None = None) -> Tensor:
    """linear(128) -> batch norm -> ReLU -> dropout(0.3, training) -> linear(2).

    Training mode normalizes with batch statistics and updates the running
    stats; evaluation uses the running stats (initialized to mean 0, var 1).
    """
    x = embedding if isinstance(embedding, Tensor) else Tensor(embedding)
    squeeze = x.ndim == 1
    if squeeze:
        x = x.reshape(1, -1)
    h = x @ params.w1.transpose((1, 0)) + params.b1
    if training:
        if h.shape[0] < 2:
            raise ConfigError("training-mode batch norm needs a batch of at least 2")
        mean = h.mean(axis=0, keepdims=True)
        centered = h - mean
        var = (centered * centered).mean(axis=0, keepdims=True)
        h = centered * (var + _BN_EPS).pow(-0.5)
        n = x.shape[0]
        unbiased = var.data[0] * n / (n - 1)
        params.running_mean *= 1.0 - _BN_MOMENTUM
        params.running_mean += _BN_MOMENTUM * mean.data[0]
        params.running_var *= 1.0 - _BN_MOMENTUM
        params.running_var += _BN_MOMENTUM * unbiased
    else:
        h = (h - params.running_mean) * Tensor((params.running_var + _BN_EPS) ** -0.5)
    h = (h * params.bn_gain + params.bn_bias).relu()
    if training and params.dropout_prob > 0:
        if rng is None:
            raise ConfigError("training-mode dropout needs an rng")
        keep = rng.uniform(size=h.shape) >= params.dropout_prob
        h = h * Tensor(keep / (1.0 - params.dropout_prob))
    out = h @ params.w2.transpose((1, 0)) + params.b2
    return out[0] if squeeze else out


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class TrainHyperparams:
    epochs: int = 300
    batch_size: int = 64
    lr_max: float = 1e-4
    lr_min: float = 0.0
    weight_decay: float = 1e-4
    patience: int = 20
    warmup_frac: float = 0.05
    augment: AugmentSpec = field(default_factory=AugmentSpec)

    def __post_init__(self):
        if self.epochs <= 0 or self.batch_size <= 0:
            raise ConfigError("epochs and batch_size must be positive")
        if self.patience <= 0:
            raise ConfigError("patience must be positive")
        if not 0.0 <= self.warmup_frac < 1.0:
            raise ConfigError(f"warmup_frac must lie in [0,1), got {self.warmup_frac}")


@dataclass
class TrainResult:
    params: dict[str, Tensor]
    log: list[dict]
    best_epoch: int
    best_val_f1: float
    optimizer: OptimizerState
    rng_state: dict


def _windows_to_arrays(windows: list[Window]) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([w.values for w in windows])
    y = np.array([w.label for w in windows], dtype=np.int64)
    return x, y


def predict_batched(x: np.ndarray, params: dict[str, Tensor], config: ViTConfig,
                    batch_size: int = 64) -> np.ndarray:
    """Evaluation-mode logits for (M, L) windows, chunked with a fixed batch
    size so results do not depend on the caller's parallelism."""
    outputs = []
    for start in range(0, x.shape[0], batch_size):
        logits = vit_forward(x[start:start + batch_size], params, config, training=False)
        outputs.append(logits.data)
    return np.concatenate(outputs, axis=0)


def train(config: ViTConfig, train_windows: list[Window], val_windows: list[Window],
          hp: TrainHyperparams, seed: int) -> TrainResult:
    """Minimize cross-entropy with AdamW and a warmup+cosine schedule;
    augment training batches only; keep the best validation macro-F1 epoch;
    stop after `patience` epochs without improvement.

    Deterministic given (config, windows, hp, seed).
    """
    if not train_windows or not val_windows:
        raise ConfigError("train and validation window sets must be non-empty")
    for w in train_windows + val_windows:
        if w.label is None or not 0 <= w.label < config.num_classes:
            raise ConfigError(
                f"window {w.window_id} has label {w.label!r} outside [0, {config.num_classes})"
            )

    params = init_vit_params(config, derive_seed(seed, "init"))
    shuffle_rng = np.random.default_rng(derive_seed(seed, "shuffle"))
    augment_rng = np.random.default_rng(derive_seed(seed, "augment", hp.augment.seed))
    depth_rng = np.random.default_rng(derive_seed(seed, "depth"))

    x_val, y_val = _windows_to_arrays(val_windows)
    n = len(train_windows)
    steps_per_epoch = (n + hp.batch_size - 1) // hp.batch_size
    total_steps = hp.epochs * steps_per_epoch
    schedule = LrSchedule(total_steps, int(round(hp.warmup_frac * total_steps)))
    opt = OptimizerState(lr_max=hp.lr_max, lr_min=hp.lr_min, weight_decay=hp.weight_decay)

    best = TrainResult(clone_params(params), [], 0, -1.0, opt, {})
    epochs_since_best = 0
    history: list[dict] = []

    for epoch in range(1, hp.epochs + 1):
        order = shuffle_rng.permutation(n)
        losses = []
        lr_t = 0.0
        for start in range(0, n, hp.batch_size):
            idx = order[start:start + hp.batch_size]
            batch = [augment(train_windows[i], hp.augment, augment_rng) for i in idx]
            x_batch = np.stack([w.values for w in batch])
            y_batch = np.array([w.label for w in batch], dtype=np.int64)
            logits = vit_forward(x_batch, params, config, training=True, rng=depth_rng)
            loss = cross_entropy(logits, y_batch)
            loss.backward()
            grads = {name: t.grad for name, t in params.items() if t.grad is not None}
            lr_t = cosine_lr(opt.step_count, schedule, hp.lr_max, hp.lr_min)
            adamw_step(params, grads, opt, lr_t)
            for t in params.values():
                t.grad = None
            losses.append(loss.item())

        val_logits = predict_batched(x_val, params, config, hp.batch_size)
        val_pred = val_logits.argmax(axis=1)
        val_f1 = macro_f1(y_val, val_pred, config.num_classes)
        history.append({
            "epoch": epoch,
            "train_loss": float(np.mean(losses)),
            "val_f1": float(val_f1),
            "lr": float(lr_t),
            "order": [int(train_windows[i].source[1]) for i in order],
        })
        if val_f1 > best.best_val_f1:
            best = TrainResult(clone_params(params), [], epoch, float(val_f1), opt, {})
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if epochs_since_best >= hp.patience:
                break

    best.log = history
    best.rng_state = {
        "shuffle": shuffle_rng.bit_generator.state,
        "augment": augment_rng.bit_generator.state,
        "depth": depth_rng.bit_generator.state,
    }
    return best


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------


def save_model(path, params: dict[str, Tensor], config: ViTConfig, *,
               optimizer: OptimizerState | None = None, epoch: int = 0,
               rng_state: dict | None = None,
               discriminator: DiscriminatorParams | None = None,
               param_dtype: str = "float64") -> None:
    """Self-describing checkpoint: config, named parameters, optimizer state,
    epoch, and RNG state. save -> load is bit-exact for float64 storage."""
    if param_dtype not in ("float64", "float32"):
        raise ConfigError(f"param_dtype must be float64 or float32, got {param_dtype}")
    store = np.float64 if param_dtype == "float64" else np.float32
    arrays = {f"param/{name}": t.data.astype(store) for name, t in params.items()}
    meta = {
        "config": config.to_dict(),
        "epoch": epoch,
        "param_dtype": param_dtype,
        "rng_state": rng_state or {},
        "optimizer": None,
    }
    if optimizer is not None:
        meta["optimizer"] = {
            "lr_max": optimizer.lr_max, "lr_min": optimizer.lr_min,
            "weight_decay": optimizer.weight_decay, "beta1": optimizer.beta1,
            "beta2": optimizer.beta2, "epsilon": optimizer.epsilon,
            "step_count": optimizer.step_count,
        }
        for name, arr in optimizer.first_moment.items():
            arrays[f"opt.m/{name}"] = arr
        for name, arr in optimizer.second_moment.items():
            arrays[f"opt.v/{name}"] = arr
    if discriminator is not None:
        for name, t in discriminator.named_tensors().items():
            arrays[f"disc/{name}"] = t.data
        arrays["disc/running_mean"] = discriminator.running_mean
        arrays["disc/running_var"] = discriminator.running_var
        meta["discriminator"] = {"dropout_prob": discriminator.dropout_prob}
    ckpt.save_checkpoint(path, meta, arrays)


def load_model(path):
    """Returns (params, config, meta, optimizer_or_None, discriminator_or_None)."""
    meta, arrays = ckpt.load_checkpoint(path)
    config = ViTConfig.from_dict(meta["config"])
    params = {
        name[len("param/"):]: Tensor(arrays[name].astype(np.float64), requires_grad=True)
        for name in arrays if name.startswith("param/")
    }
    optimizer = None
    if meta.get("optimizer"):
        o = meta["optimizer"]
        optimizer = OptimizerState(
            lr_max=o["lr_max"], lr_min=o["lr_min"], weight_decay=o["weight_decay"],
            beta1=o["beta1"], beta2=o["beta2"], epsilon=o["epsilon"],
            step_count=o["step_count"],
        )
        for name in arrays:
            if name.startswith("opt.m/"):
                optimizer.first_moment[name[len("opt.m/"):]] = arrays[name]
            elif name.startswith("opt.v/"):
                optimizer.second_moment[name[len("opt.v/"):]] = arrays[name]
    discriminator = None
    if "disc/w1" in arrays:
        discriminator = DiscriminatorParams(
            w1=Tensor(arrays["disc/w1"], requires_grad=True),
            b1=Tensor(arrays["disc/b1"], requires_grad=True),
            bn_gain=Tensor(arrays["disc/bn_gain"], requires_grad=True),
            bn_bias=Tensor(arrays["disc/bn_bias"], requires_grad=True),
            w2=Tensor(arrays["disc/w2"], requires_grad=True),
            b2=Tensor(arrays["disc/b2"], requires_grad=True),
            running_mean=arrays["disc/running_mean"],
            running_var=arrays["disc/running_var"],
            dropout_prob=meta.get("discriminator", {}).get("dropout_prob",
                                                           DISCRIMINATOR_DROPOUT),
        )
    return params, config, meta, optimizer, discriminator
