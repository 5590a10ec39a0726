"""Alternating optimization of generator weights and per-sample latent codes.

Each epoch first sweeps shuffled minibatches and takes one gradient step on
the weights per batch with the codes held fixed, then takes
``z_steps_per_epoch`` passes over every sample, moving each code along its
own reconstruction gradient and projecting it back onto the unit ball.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numerics as nx
from .generator import GeneratorConfig, GeneratorParams, build_graph, check_condition, init_params

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "cglo-checkpoint"
CHECKPOINT_VERSION = 1
PROJECTIONS = ("ball", "sphere")


class TrainingDiverged(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    lr_w: float = 0.1
    lr_z: float = 1.0
    batch_size: int = 8
    z_steps_per_epoch: int = 1
    projection: str = "ball"
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.lr_w <= 0 or self.lr_z <= 0:
            raise ValueError("learning rates must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.z_steps_per_epoch < 0:
            raise ValueError("z_steps_per_epoch must be >= 0")
        if self.projection not in PROJECTIONS:
            raise ValueError(f"projection must be one of {PROJECTIONS}")


@dataclass
class LatentTable:
    """One code and one condition label per training sample, row-aligned with the patches."""

    ids: list
    codes: np.ndarray
    conditions: np.ndarray

    def __post_init__(self):
        self.ids = list(self.ids)
        self.codes = np.asarray(self.codes, dtype=nx.DTYPE)
        self.conditions = np.asarray(self.conditions, dtype=nx.DTYPE)
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("sample ids must be unique")
        if self.codes.ndim != 2 or len(self.codes) != len(self.ids) or self.conditions.shape != (len(self.ids),):
            raise ValueError("ids, codes and conditions must be aligned")
        for c in self.conditions:
            check_condition(c)
        self._rows = {sid: i for i, sid in enumerate(self.ids)}

    def __len__(self):
        return len(self.ids)

    def row(self, sample_id) -> int:
        try:
            return self._rows[sample_id]
        except KeyError:
            raise KeyError(f"unknown sample id {sample_id!r}") from None

    def copy(self) -> "LatentTable":
        return LatentTable(list(self.ids), self.codes.copy(), self.conditions.copy())

    def max_norm(self) -> float:
        return float(np.linalg.norm(self.codes, axis=1).max()) if len(self) else 0.0


@dataclass
class LossHistory:
    mean_loss: list[float] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "mean_loss"])
        for epoch, v in enumerate(self.mean_loss, start=1):
            w.writerow([epoch, repr(float(v))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "LossHistory":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0] != ["epoch", "mean_loss"]:
            raise ValueError("loss history CSV must start with 'epoch,mean_loss'")
        return cls([float(r[1]) for r in rows[1:]])


def project_latent(z: np.ndarray, mode: str = "ball") -> np.ndarray:
    """Project onto the unit L2 ball (or, with ``mode='sphere'``, onto the unit sphere)."""
    z = np.asarray(z, dtype=nx.DTYPE)
    norm = np.linalg.norm(z)
    if mode == "ball":
        return z if norm <= 1.0 else z / norm
    if mode == "sphere":
        return z / norm if norm > 0 else z
    raise ValueError(f"unknown projection mode {mode!r}")


def init_latents(n: int, d: int, seed, projection: str = "ball") -> np.ndarray:
    if n < 1 or d < 1:
        raise ValueError("n and d must be >= 1")
    rng = np.random.default_rng(seed)
    raw = rng.normal(0.0, 1.0 / np.sqrt(d), size=(n, d))
    return np.stack([project_latent(z, projection) for z in raw])


def make_table(conditions, d: int, seed, ids=None, projection: str = "ball") -> LatentTable:
    conditions = np.asarray(conditions, dtype=nx.DTYPE)
    ids = list(range(len(conditions))) if ids is None else list(ids)
    return LatentTable(ids, init_latents(len(conditions), d, seed, projection), conditions)


def sample_loss(params: GeneratorParams, z, c, target) -> float:
    return float(nx.l1_loss(build_graph(params.config, params.tensors, z, c), target).value)


def _weight_grads(params, z, c, target):
    leaves = {k: nx.leaf(v, name=k) for k, v in params.tensors.items()}
    loss = nx.l1_loss(build_graph(params.config, leaves, z, c), target)
    return float(loss.value), nx.backward(loss, list(leaves.values()))


def _latent_grad(params, z, c, target):
    zv = nx.leaf(z, name="z")
    loss = nx.l1_loss(build_graph(params.config, params.tensors, zv, c), target)
    return float(loss.value), nx.backward(loss, [zv])["z"]


def step_weights(params: GeneratorParams, table: LatentTable, patches, batch_ids, lr_w: float):
    """One gradient step on the weights over the batch's mean loss.

    Returns the updated params and the batch loss measured before the step.
    """
    batch_ids = list(batch_ids)
    if not batch_ids:
        raise ValueError("step_weights needs a non-empty batch")
    total = {k: np.zeros_like(v) for k, v in params.tensors.items()}
    loss_sum = 0.0
    for sid in batch_ids:
        r = table.row(sid)
        loss, grads = _weight_grads(params, table.codes[r], table.conditions[r], patches[r])
        loss_sum += loss
        for k, g in grads.items():
            total[k] += g
    n = len(batch_ids)
    tensors = {k: v - lr_w * (total[k] / n) for k, v in params.tensors.items()}
    return GeneratorParams(params.config, tensors), loss_sum / n


def step_latents(params: GeneratorParams, table: LatentTable, patches, sample_ids, lr_z: float,
                 projection: str = "ball"):
    """Projected gradient step on each listed code against its own loss.

    Samples never interact, so the result does not depend on how the ids are
    grouped or ordered. Returns a new table and the mean pre-step loss.
    """
    sample_ids = list(sample_ids)
    out = table.copy()
    losses = []
    for sid in sample_ids:
        r = table.row(sid)
        loss, g = _latent_grad(params, table.codes[r], table.conditions[r], patches[r])
        out.codes[r] = project_latent(table.codes[r] - lr_z * g, projection)
        losses.append(loss)
    return out, (float(np.mean(losses)) if losses else 0.0)


def train(patches, conditions, gen_config: GeneratorConfig, train_config: TrainConfig,
          ids=None, params: GeneratorParams | None = None, table: LatentTable | None = None,
          callback=None):
    """Fit generator weights and latent codes jointly.

    ``callback(epoch, params, table, history)`` runs after every epoch.
    Returns ``(params, table, history)``.
    """
    patches = np.asarray(patches, dtype=nx.DTYPE)
    if len(patches) == 0:
        raise ValueError("no training patches")
    if patches.shape[1:] != gen_config.patch_shape:
        raise ValueError(f"patch shape {patches.shape[1:]} does not match generator output {gen_config.patch_shape}")
    if len(conditions) != len(patches):
        raise ValueError(f"{len(patches)} patches but {len(conditions)} condition labels")

    tc = train_config
    params = init_params(gen_config) if params is None else params
    table = make_table(conditions, gen_config.d, [tc.seed, 1], ids, tc.projection) if table is None else table
    rng = np.random.default_rng([tc.seed, 2])
    history = LossHistory()

    for epoch in range(1, tc.epochs + 1):
        order = rng.permutation(len(table))
        weighted = 0.0
        for b, start in enumerate(range(0, len(order), tc.batch_size)):
            batch = [table.ids[i] for i in order[start:start + tc.batch_size]]
            params, loss = step_weights(params, table, patches, batch, tc.lr_w)
            if not np.isfinite(loss) or not params.is_finite():
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch {b}")
            weighted += loss * len(batch)
        epoch_loss = weighted / len(table)
        for _ in range(tc.z_steps_per_epoch):
            table, epoch_loss = step_latents(params, table, patches, table.ids, tc.lr_z, tc.projection)
            if not np.isfinite(epoch_loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, latent pass")
        history.mean_loss.append(epoch_loss)
        log.debug("epoch %d mean loss %.6f", epoch, epoch_loss)
        if callback is not None:
            callback(epoch, params, table, history)
    return params, table, history


def invert(params: GeneratorParams, image, c, steps: int = 500, lr_z: float = 1.0, seed=0,
           projection: str = "ball"):
    """Recover a latent code for ``image`` with the weights frozen.

    Starts from a random code and runs ``steps`` projected gradient steps,
    returning the best code seen (initialization included) and its loss.
    """
    image = np.asarray(image, dtype=nx.DTYPE)
    if image.shape != params.config.patch_shape:
        raise ValueError(f"image shape {image.shape} does not match generator output {params.config.patch_shape}")
    c = check_condition(c)
    z = init_latents(1, params.config.d, seed, projection)[0]
    best_z, best_loss = z, np.nan
    for step in range(steps + 1):
        loss, g = _latent_grad(params, z, c, image)
        if not np.isfinite(loss):
            break
        if not loss >= best_loss:  # also true while best_loss is nan
            best_z, best_loss = z, loss
        if step == steps:
            break
        z = project_latent(z - lr_z * g, projection)
    if np.isnan(best_loss):
        best_loss = float("nan")
    return best_z.copy(), float(best_loss)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def checkpoint_path(run_dir, epoch: int) -> Path:
    return Path(run_dir) / f"ckpt-{epoch}"


def save_checkpoint(params: GeneratorParams, table: LatentTable, history: LossHistory, path) -> Path:
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "generator": params.config.to_dict(),
        "param_names": params.names(),
        "ids": table.ids,
        "history": [float(v) for v in history.mean_loss],
    }
    arrays = {f"param/{k}": v for k, v in params.tensors.items()}
    arrays["table/codes"] = table.codes
    arrays["table/conditions"] = table.conditions
    arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        np.savez(fh, **arrays)
    tmp.replace(path)
    return path


def load_checkpoint(path):
    """Load ``(params, table, history)``; raises :class:`CheckpointError` on any defect."""
    path = Path(path)
    try:
        with np.load(path, allow_pickle=False) as npz:
            data = {k: npz[k] for k in npz.files}
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint ({type(exc).__name__}: {exc})") from exc
    try:
        meta = json.loads(bytes(data["meta"]).decode())
    except Exception as exc:
        raise CheckpointError(f"{path}: missing or corrupt metadata") from exc
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"{path}: checkpoint version {meta.get('version')}, this build reads version {CHECKPOINT_VERSION}")
    try:
        config = GeneratorConfig(**meta["generator"])
        params = GeneratorParams(config, {k: data[f"param/{k}"] for k in meta["param_names"]})
        table = LatentTable(meta["ids"], data["table/codes"], data["table/conditions"])
        history = LossHistory([float(v) for v in meta["history"]])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: inconsistent checkpoint contents ({exc})") from exc
    return params, table, history
