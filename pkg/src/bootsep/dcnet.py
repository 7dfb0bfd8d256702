"""Single-channel separation model: a bidirectional recurrent encoder
producing per-bin unit-norm embeddings, trained with the
confidence-weighted deep clustering objective and applied via K-means.

The loss ||W^(1/2)(VV^T - YY^T)W^(1/2)||_F^2 is evaluated through the
low-rank identity ||A^T A||^2 - 2||A^T B||^2 + ||B^T B||^2 with
A = W^(1/2) V and B = W^(1/2) Y, so the (TF)^2 affinity matrix is never
materialized.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np
import torch

from .cluster import kmeans
from .separation import MaskSet, apply_masks
from .signal import Waveform, stft
from .spatial import compute_log_mag

CHECKPOINT_MAGIC = b"BSCK"

# fixed affine input scaling: log magnitudes in [-120, 0] dB map near [-1, 1]
_INPUT_OFFSET = 60.0
_INPUT_SCALE = 60.0


class DcnetError(ValueError):
    pass


class NotTrainedError(DcnetError):
    pass


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class NetworkConfig:
    n_freq: int
    embedding_dim: int = 15
    hidden_size: int = 64
    num_layers: int = 2


@dataclass
class TrainingConfig:
    epochs: int = 100
    batch_size: int = 40
    max_frames: int = 400
    initial_lr: float = 1e-3
    plateau_patience: int = 5
    lr_decay: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if min(self.epochs, self.batch_size, self.max_frames) <= 0:
            raise DcnetError("epochs, batch_size, max_frames must be positive")
        if self.initial_lr <= 0 or self.plateau_patience <= 0:
            raise DcnetError("initial_lr and plateau_patience must be positive")
        if not 0.0 < self.lr_decay < 1.0:
            raise DcnetError("lr_decay must lie in (0, 1)")


class EmbeddingNetwork(torch.nn.Module):
    """Bidirectional GRU stack + dense tanh head + per-bin normalization."""

    def __init__(self, config: NetworkConfig, seed: int = 0, dtype=torch.float32):
        super().__init__()
        self.config = config
        self.init_seed = seed
        torch.manual_seed(seed)
        self.rnn = torch.nn.GRU(
            config.n_freq,
            config.hidden_size,
            num_layers=config.num_layers,
            batch_first=True,
            bidirectional=True,
        )
        self.dense = torch.nn.Linear(
            2 * config.hidden_size, config.n_freq * config.embedding_dim
        )
        self.to(dtype)
        self.trained = False

    @property
    def dtype(self):
        return self.dense.weight.dtype

    @property
    def n_parameters(self):
        return sum(p.numel() for p in self.parameters())

    def embed_batch(self, x: torch.Tensor) -> torch.Tensor:
        """(B, T, F) log magnitudes -> (B, T, F, D) unit-norm embeddings."""
        if not torch.all(torch.isfinite(x)):
            raise DcnetError("non-finite network input")
        b, t, f = x.shape
        h, _ = self.rnn((x + _INPUT_OFFSET) / _INPUT_SCALE)
        e = torch.tanh(self.dense(h))
        e = e.view(b, t, f, self.config.embedding_dim)
        return e / (e.norm(dim=-1, keepdim=True) + 1e-8)


def forward(net: EmbeddingNetwork, log_mag: np.ndarray) -> np.ndarray:
    """Embed one spectrogram; returns V with shape (T*F, D), unit rows."""
    x = torch.as_tensor(np.asarray(log_mag, dtype=np.float64)[None]).to(net.dtype)
    with torch.no_grad():
        v = net.embed_batch(x)[0]
    return v.reshape(-1, net.config.embedding_dim).double().numpy()


def _one_hot(labels: torch.Tensor, n_sources: int) -> torch.Tensor:
    return torch.nn.functional.one_hot(labels.long(), n_sources)


def _loss_lowrank(v: torch.Tensor, y: torch.Tensor, w: torch.Tensor) -> torch.Tensor:
    """Batched weighted DC loss; v (B, M, D), y (B, M, N), w (B, M)."""
    if torch.any(w < 0):
        raise DcnetError("negative weights")
    ws = torch.sqrt(w).unsqueeze(-1)
    a = ws * v
    b = ws * y
    ata = a.transpose(1, 2) @ a
    atb = a.transpose(1, 2) @ b
    btb = b.transpose(1, 2) @ b
    return (
        ata.pow(2).sum(dim=(1, 2))
        - 2.0 * atb.pow(2).sum(dim=(1, 2))
        + btb.pow(2).sum(dim=(1, 2))
    )


def weighted_dc_loss(v, labels, weights, n_sources: int | None = None) -> float:
    """Weighted deep clustering loss for one instance (numpy in, float out)."""
    v = np.asarray(v, dtype=np.float64)
    labels = np.asarray(labels).reshape(-1)
    weights = np.asarray(weights, dtype=np.float64).reshape(-1)
    if v.shape[0] != labels.shape[0] or v.shape[0] != weights.shape[0]:
        raise DcnetError("V rows, labels and weights must have equal length")
    if n_sources is None:
        n_sources = int(labels.max()) + 1 if labels.size else 1
    vt = torch.as_tensor(v)[None]
    yt = _one_hot(torch.as_tensor(labels), n_sources).double()[None]
    wt = torch.as_tensor(weights)[None]
    return float(_loss_lowrank(vt, yt, wt)[0])


def parameter_vector(net: EmbeddingNetwork) -> np.ndarray:
    return np.concatenate(
        [p.detach().double().numpy().ravel() for p in net.parameters()]
    )


def set_parameter_vector(net: EmbeddingNetwork, vec: np.ndarray):
    pos = 0
    with torch.no_grad():
        for p in net.parameters():
            n = p.numel()
            chunk = torch.as_tensor(vec[pos : pos + n]).to(p.dtype).view(p.shape)
            p.copy_(chunk)
            pos += n
    if pos != vec.size:
        raise DcnetError("parameter vector length mismatch")


def _batch_loss(net, x, labels, weights, n_sources):
    v = net.embed_batch(x)
    b, t, f, d = v.shape
    v = v.reshape(b, t * f, d)
    y = _one_hot(labels.reshape(b, t * f), n_sources).to(net.dtype)
    w = weights.reshape(b, t * f)
    return _loss_lowrank(v, y, w)


def loss_gradient(net: EmbeddingNetwork, batch, n_sources: int | None = None):
    """Gradient of the weighted DC loss w.r.t. all parameters, flattened."""
    log_mag, labels, weights = batch
    labels = np.asarray(labels)
    if n_sources is None:
        n_sources = int(labels.max()) + 1
    x = torch.as_tensor(np.asarray(log_mag, dtype=np.float64)[None]).to(net.dtype)
    yt = torch.as_tensor(labels[None])
    wt = torch.as_tensor(np.asarray(weights, dtype=np.float64)[None]).to(net.dtype)
    net.zero_grad()
    loss = _batch_loss(net, x, yt, wt, n_sources)[0]
    if not torch.isfinite(loss):
        raise TrainingDivergedError("non-finite loss")
    loss.backward()
    grads = []
    for p in net.parameters():
        g = p.grad
        grads.append(
            np.zeros(p.numel()) if g is None else g.detach().double().numpy().ravel()
        )
    return np.concatenate(grads)


class PlateauScheduler:
    """Halve the rate whenever validation loss stalls for `patience` epochs."""

    def __init__(self, initial_lr, patience, decay):
        self.lr = initial_lr
        self.patience = patience
        self.decay = decay
        self.best = np.inf
        self.bad_epochs = 0

    def step(self, val_loss) -> float:
        if val_loss < self.best - 1e-12:
            self.best = val_loss
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.lr *= self.decay
                self.bad_epochs = 0
        return self.lr


@dataclass
class TrainResult:
    train_losses: list = field(default_factory=list)
    val_losses: list = field(default_factory=list)
    learning_rates: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = np.inf


def _prepare(dataset, max_frames):
    out = []
    for log_mag, labels, weights in dataset:
        out.append(
            (
                np.asarray(log_mag, dtype=np.float64)[:max_frames],
                np.asarray(labels)[:max_frames],
                np.asarray(weights, dtype=np.float64)[:max_frames],
            )
        )
    return out


def _grouped_loss(net, items, n_sources):
    """Sum of per-sample losses; items grouped by frame count for batching."""
    groups = {}
    for it in items:
        groups.setdefault(it[0].shape[0], []).append(it)
    total = None
    for group in groups.values():
        x = torch.as_tensor(np.stack([g[0] for g in group])).to(net.dtype)
        y = torch.as_tensor(np.stack([g[1] for g in group]))
        w = torch.as_tensor(np.stack([g[2] for g in group])).to(net.dtype)
        s = _batch_loss(net, x, y, w, n_sources).sum()
        total = s if total is None else total + s
    return total


def train(net: EmbeddingNetwork, train_set, val_set, config: TrainingConfig):
    """Adam training with a validation plateau schedule.

    Deterministic given config.seed; the best-validation parameters are
    restored into the network before returning.
    """
    if not train_set or not val_set:
        raise DcnetError("empty train or validation split")
    torch.set_num_threads(1)  # run-to-run reproducibility
    train_items = _prepare(train_set, config.max_frames)
    val_items = _prepare(val_set, config.max_frames)
    n_sources = int(max(it[1].max() for it in train_items + val_items)) + 1

    rng = np.random.default_rng(config.seed)
    opt = torch.optim.Adam(
        net.parameters(), lr=config.initial_lr, betas=(0.9, 0.999), eps=1e-8
    )
    sched = PlateauScheduler(config.initial_lr, config.plateau_patience, config.lr_decay)
    result = TrainResult()
    best_state = None

    for epoch in range(config.epochs):
        net.train()
        order = rng.permutation(len(train_items))
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            chunk = [train_items[i] for i in order[start : start + config.batch_size]]
            opt.zero_grad()
            loss = _grouped_loss(net, chunk, n_sources) / len(chunk)
            if not torch.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite training loss at epoch {epoch}"
                )
            loss.backward()
            opt.step()
            epoch_loss += float(loss.detach()) * len(chunk)
        result.train_losses.append(epoch_loss / len(train_items))

        net.eval()
        with torch.no_grad():
            val_loss = float(_grouped_loss(net, val_items, n_sources)) / len(val_items)
        if not np.isfinite(val_loss):
            raise TrainingDivergedError(f"non-finite validation loss at epoch {epoch}")
        result.val_losses.append(val_loss)

        if val_loss < result.best_val_loss:
            result.best_val_loss = val_loss
            result.best_epoch = epoch
            best_state = {k: v.clone() for k, v in net.state_dict().items()}

        lr = sched.step(val_loss)
        result.learning_rates.append(lr)
        for group in opt.param_groups:
            group["lr"] = lr

    if best_state is not None:
        net.load_state_dict(best_state)
    net.trained = True
    return result


def infer(
    net: EmbeddingNetwork,
    w: Waveform,
    n_sources: int,
    window_ms: float = 32.0,
    hop_ms: float = 8.0,
    seed: int = 0,
    kmeans_restarts: int = 10,
):
    """Separate a mono mixture: embed, K-means, binary masks, iSTFT."""
    if not net.trained:
        raise NotTrainedError("network has not been trained or loaded")
    if n_sources < 2:
        raise DcnetError("n_sources must be >= 2")
    spec = stft(w.channel(0), window_ms, hop_ms)
    log_mag = compute_log_mag(spec, channel=0)
    v = forward(net, log_mag)
    labels, _, _ = kmeans(v, n_sources, seed=seed, n_restarts=kmeans_restarts)
    grid = labels.reshape(spec.n_frames, spec.n_freqs)
    masks = np.stack([(grid == j).astype(np.float64) for j in range(n_sources)])
    return apply_masks(spec, MaskSet(masks), channel=0, n_samples=w.n_samples)


# ---------------------------------------------------------------------------
# Checkpoint format: magic, uint32 header length, JSON header, then the
# parameters as one little-endian float32 blob in header-declared order.


def save_checkpoint(net: EmbeddingNetwork, path, extra: dict | None = None):
    state = net.state_dict()
    order = [{"name": k, "shape": list(v.shape)} for k, v in state.items()]
    header = {
        "format": "bootsep-checkpoint-v1",
        "n_freq": net.config.n_freq,
        "embedding_dim": net.config.embedding_dim,
        "hidden_size": net.config.hidden_size,
        "num_layers": net.config.num_layers,
        "init_seed": net.init_seed,
        "trained": net.trained,
        "param_order": order,
    }
    if extra:
        header.update(extra)
    blob = b"".join(
        v.detach().cpu().numpy().astype("<f4").tobytes() for v in state.values()
    )
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(header_bytes)))
        f.write(header_bytes)
        f.write(blob)


def load_checkpoint(path, dtype=torch.float32):
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise DcnetError("not a checkpoint file")
    (hlen,) = struct.unpack("<I", raw[4:8])
    header = json.loads(raw[8 : 8 + hlen].decode("utf-8"))
    cfg = NetworkConfig(
        n_freq=header["n_freq"],
        embedding_dim=header["embedding_dim"],
        hidden_size=header["hidden_size"],
        num_layers=header["num_layers"],
    )
    net = EmbeddingNetwork(cfg, seed=header.get("init_seed", 0), dtype=dtype)
    blob = np.frombuffer(raw[8 + hlen :], dtype="<f4")
    state = {}
    pos = 0
    for entry in header["param_order"]:
        n = int(np.prod(entry["shape"])) if entry["shape"] else 1
        arr = blob[pos : pos + n].reshape(entry["shape"])
        state[entry["name"]] = torch.as_tensor(np.array(arr)).to(dtype)
        pos += n
    if pos != blob.size:
        raise DcnetError("checkpoint blob length mismatch")
    net.load_state_dict(state)
    net.trained = bool(header.get("trained", True))
    return net, header
