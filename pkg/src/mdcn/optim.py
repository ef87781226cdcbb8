"""Adam optimization, the halving learning-rate schedule, mixed-factor
batch sampling, and the training loop.

One batch carries a single factor drawn uniformly, so all its LR patches
share a spatial size; gradients flow into the trunk and that factor's
reconstruction head only.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, asdict, fields
from pathlib import Path

import numpy as np

from .data import LoadedDataset, dihedral_apply
from .errors import ConfigError, ContractViolationError, DataError, NumericError
from .model import ParameterStore, forward
from .tensor import Tape, Tensor, backward, l1_loss

__all__ = [
    "AdamState",
    "TrainConfig",
    "adam_step",
    "lr_at",
    "sample_batch",
    "train",
    "EpochRecord",
    "TRAIN_LOG_HEADER",
]

TRAIN_LOG_HEADER = ("epoch", "iteration", "factor", "loss", "lr", "seconds")

SAMPLE_RETRIES = 100


@dataclass
class AdamState:
    """First/second moment buffers plus the shared step counter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_store(cls, store: ParameterStore) -> "AdamState":
        return cls(
            m={name: np.zeros_like(t.data) for name, t in store.items()},
            v={name: np.zeros_like(t.data) for name, t in store.items()},
        )


def adam_step(store: ParameterStore, state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update over every trainable in the store.

    Parameters whose current gradient is identically zero are skipped
    outright (no moment decay, no movement), so reconstruction heads that
    did not participate in the batch stay frozen.
    """
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for name, p in store.items():
        g = p.grad
        if g is None:
            raise ContractViolationError(f"parameter {name!r} has no gradient")
        if not g.any():
            continue
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    hr_patch: int = 48
    base_lr: float = 1e-4
    lr_halve_every: int = 200
    iters_per_epoch: int = 1000
    epochs: int = 1
    factors: tuple[int, ...] = (2, 3, 4)
    seed: int = 0

    def __post_init__(self):
        if not isinstance(self.batch_size, int) or self.batch_size < 1:
            raise ConfigError(f"batch_size must be an integer >= 1, got {self.batch_size!r}")
        if not isinstance(self.hr_patch, int) or self.hr_patch < 1:
            raise ConfigError(f"hr_patch must be an integer >= 1, got {self.hr_patch!r}")
        if not self.base_lr > 0:
            raise ConfigError(f"base_lr must be positive, got {self.base_lr!r}")
        if not isinstance(self.lr_halve_every, int) or self.lr_halve_every < 1:
            raise ConfigError(
                f"lr_halve_every must be an integer >= 1, got {self.lr_halve_every!r}"
            )
        if not isinstance(self.iters_per_epoch, int) or self.iters_per_epoch < 1:
            raise ConfigError(
                f"iters_per_epoch must be an integer >= 1, got {self.iters_per_epoch!r}"
            )
        if not isinstance(self.epochs, int) or self.epochs < 1:
            raise ConfigError(f"epochs must be an integer >= 1, got {self.epochs!r}")
        try:
            factors = tuple(sorted(set(int(f) for f in self.factors)))
        except (TypeError, ValueError):
            raise ConfigError(f"factors must be integers, got {self.factors!r}") from None
        if not factors:
            raise ConfigError("factors must be non-empty")
        object.__setattr__(self, "factors", factors)
        bad = [f for f in factors if self.hr_patch % f != 0]
        if bad:
            raise ConfigError(
                f"hr_patch {self.hr_patch} is not divisible by factor(s) {bad}"
            )
        if not isinstance(self.seed, int):
            raise ConfigError(f"seed must be an integer, got {self.seed!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["factors"] = list(self.factors)
        return d

    @classmethod
    def from_dict(cls, payload: dict) -> "TrainConfig":
        if not isinstance(payload, dict):
            raise ConfigError(f"train config must be a JSON object, got {type(payload).__name__}")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(payload) - known)
        if unknown:
            raise ConfigError(f"unknown train config field(s): {', '.join(unknown)}")
        missing = sorted(known - set(payload))
        if missing:
            raise ConfigError(f"missing train config field(s): {', '.join(missing)}")
        clean = dict(payload)
        if isinstance(clean.get("factors"), list):
            clean["factors"] = tuple(clean["factors"])
        return cls(**clean)


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """base_lr halved once per ``lr_halve_every`` epochs."""
    if epoch < 0:
        raise ContractViolationError(f"epoch must be >= 0, got {epoch}")
    return cfg.base_lr * 0.5 ** (epoch // cfg.lr_halve_every)


def sample_batch(dataset: LoadedDataset, cfg: TrainConfig, rng: np.random.Generator):
    """Draw one factor uniformly, then ``batch_size`` aligned, identically
    augmented LR/HR patch pairs from the training split.

    Returns (lr_batch, hr_batch, factor) with tensors in [0, 1].
    """
    records = dataset.split("train")
    if not records:
        raise DataError("dataset has no training records")
    missing = [f for f in cfg.factors if any(f not in r.lr for r in records)]
    if missing:
        raise DataError(f"dataset lacks LR images for factor(s) {missing}")
    factor = int(cfg.factors[rng.integers(len(cfg.factors))])
    lr_size = cfg.hr_patch // factor
    lr_patches = []
    hr_patches = []
    for _ in range(cfg.batch_size):
        for _attempt in range(SAMPLE_RETRIES):
            rec = records[rng.integers(len(records))]
            lr = rec.lr[factor]
            if lr.shape[0] < lr_size or lr.shape[1] < lr_size:
                continue
            y = int(rng.integers(lr.shape[0] - lr_size + 1))
            x = int(rng.integers(lr.shape[1] - lr_size + 1))
            lr_patch = lr[y : y + lr_size, x : x + lr_size]
            hr = rec.hr_for(factor)
            hy, hx = y * factor, x * factor
            hr_patch = hr[hy : hy + cfg.hr_patch, hx : hx + cfg.hr_patch]
            k = int(rng.integers(8))
            lr_patches.append(np.ascontiguousarray(dihedral_apply(lr_patch, k, axes=(0, 1))))
            hr_patches.append(np.ascontiguousarray(dihedral_apply(hr_patch, k, axes=(0, 1))))
            break
        else:
            raise DataError(
                f"could not sample a {cfg.hr_patch}px patch at factor {factor} "
                f"after {SAMPLE_RETRIES} attempts; images too small?"
            )
    def to_tensor(stack):
        arr = np.stack(stack).astype(np.float32) / 255.0
        return Tensor(np.ascontiguousarray(arr.transpose(0, 3, 1, 2)))

    return to_tensor(lr_patches), to_tensor(hr_patches), factor


@dataclass
class EpochRecord:
    epoch: int
    mean_loss: float
    lr: float
    seconds: float


def train(store: ParameterStore, dataset: LoadedDataset, cfg: TrainConfig,
          log_path=None) -> list[EpochRecord]:
    """Run the full loop: sample, forward at the batch's factor, L1 loss,
    backward, Adam step at the scheduled rate.

    Appends one TSV row per iteration to ``log_path`` (header
    ``epoch iteration factor loss lr seconds``) and returns per-epoch
    summaries.  Deterministic for a fixed config seed.  A non-finite loss
    aborts with the iteration, factor, and learning rate in the message.
    """
    rng = np.random.default_rng(cfg.seed)
    state = AdamState.for_store(store)
    records: list[EpochRecord] = []
    epoch_losses: list[float] = []
    total = cfg.epochs * cfg.iters_per_epoch
    start = time.perf_counter()
    log_file = None
    if log_path is not None:
        log_file = Path(log_path).open("a", encoding="utf-8")
        if log_file.tell() == 0:
            log_file.write("\t".join(TRAIN_LOG_HEADER) + "\n")
    try:
        for it in range(total):
            epoch = it // cfg.iters_per_epoch
            lr = lr_at(epoch, cfg)
            lr_batch, hr_batch, factor = sample_batch(dataset, cfg, rng)
            store.zero_grads()
            with Tape() as tape:
                pred = forward(store, lr_batch, factor)
                loss = l1_loss(pred, hr_batch)
                loss_val = loss.item()
                if not np.isfinite(loss_val):
                    raise NumericError(
                        f"non-finite loss {loss_val} at iteration {it} "
                        f"(factor {factor}, lr {lr})"
                    )
                backward(loss, tape)
            adam_step(store, state, lr)
            elapsed = time.perf_counter() - start
            epoch_losses.append(loss_val)
            if log_file is not None:
                row = (epoch, it, factor, loss_val, lr, elapsed)
                log_file.write("\t".join(repr(v) if isinstance(v, float) else str(v)
                                         for v in row) + "\n")
            if (it + 1) % cfg.iters_per_epoch == 0:
                records.append(EpochRecord(
                    epoch=epoch,
                    mean_loss=float(np.mean(epoch_losses)),
                    lr=lr,
                    seconds=time.perf_counter() - start,
                ))
                epoch_losses = []
    finally:
        if log_file is not None:
            log_file.close()
    return records
