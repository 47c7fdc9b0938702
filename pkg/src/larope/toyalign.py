"""Synthetic monotonic alignment tasks and the SGD harness that trains on them.

Each task is a short "text" of token ids (the keys) and a longer "speech"
sequence (the queries) whose frame m should read the value of token
``ideal(m) = round(m (L_k - 1) / (L_q - 1))``. Queries carry no content: every
row is the same vector, so the only way to find the right token is through the
positional encoding.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .numkernel import make_rng
from .rotary import RotaryConfig, Variant
from .xattn import PARAM_NAMES, CrossAttentionLayer, alignment_error, backward, forward

log = logging.getLogger(__name__)

DEFAULT_DURATION_FACTORS = (0.7, 0.85, 1.0, 1.2, 1.4)
EVAL_TASKS = 32
# Constant last coordinate of every key embedding. Without a shared input
# direction the key projection cannot easily be made token-independent, and
# token-dependent key phases shift the attention peak by whole cells.
KEY_BIAS = 3.0

# independent random streams per run seed
WORLD_STREAM, INIT_STREAM, TRAIN_STREAM, EVAL_STREAM, LONG_STREAM, MAP_STREAM = range(1, 7)


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    variant: Variant = Variant.LAROPE
    gamma: float = 10.0
    base: float = 10000.0
    d_model: int = 32
    d: int = 16
    vocab: int = 16
    lk_range: tuple[int, int] = (8, 24)
    ratio_range: tuple[float, float] = (2.0, 4.0)
    steps: int = 2000
    lr: float = 0.05
    batch_size: int = 8
    noise_sigma: float = 0.05
    eval_interval: int = 50

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        object.__setattr__(self, "lk_range", tuple(int(v) for v in self.lk_range))
        object.__setattr__(self, "ratio_range", tuple(float(v) for v in self.ratio_range))
        for name in ("d_model", "vocab", "steps", "batch_size", "eval_interval"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.seed < 0:
            raise ValueError(f"seed must be non-negative, got {self.seed}")
        if self.lr < 0 or self.noise_sigma < 0:
            raise ValueError("lr and noise_sigma must be non-negative")
        lo, hi = self.lk_range
        if not 2 <= lo <= hi:
            raise ValueError(f"lk_range must satisfy 2 <= lo <= hi, got {self.lk_range}")
        rlo, rhi = self.ratio_range
        if not 0 < rlo <= rhi:
            raise ValueError(f"ratio_range must satisfy 0 < lo <= hi, got {self.ratio_range}")
        self.rotary()  # validates d, base, gamma

    def rotary(self) -> RotaryConfig:
        return RotaryConfig(self.d, self.base, self.gamma, self.variant)

    def replace(self, **changes) -> "TrainConfig":
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(changes)
        return TrainConfig(**values)

    def to_json(self) -> dict:
        out = asdict(self)
        out["variant"] = self.variant.value
        out["lk_range"] = list(self.lk_range)
        out["ratio_range"] = list(self.ratio_range)
        return out

    @classmethod
    def from_json(cls, doc: dict) -> "TrainConfig":
        """Build from a JSON object; unknown or ill-typed fields raise ``ValueError`` naming the field."""
        if not isinstance(doc, dict):
            raise ValueError("train config must be a JSON object")
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, value in doc.items():
            if key not in known:
                raise ValueError(f"unknown config field {key!r}")
            try:
                kwargs[key] = _coerce_field(key, value)
            except (TypeError, ValueError) as exc:
                raise ValueError(f"invalid value for config field {key!r}: {exc}") from None
        return cls(**kwargs)


def _coerce_field(key: str, value):
    if key == "variant":
        return Variant(str(value).lower())
    if key in ("lk_range", "ratio_range"):
        if not isinstance(value, (list, tuple)) or len(value) != 2:
            raise ValueError("expected a two-element list [lo, hi]")
        cast = int if key == "lk_range" else float
        return tuple(_strict_number(v, cast) for v in value)
    if key in ("seed", "d_model", "d", "vocab", "steps", "batch_size", "eval_interval"):
        return _strict_number(value, int)
    return _strict_number(value, float)


def _strict_number(value, cast):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise TypeError(f"expected a number, got {value!r}")
    if cast is int and float(value) != int(value):
        raise ValueError(f"expected an integer, got {value!r}")
    return cast(value)


@dataclass(frozen=True)
class ToyWorld:
    """Per-seed fixtures shared by every task in a run."""

    key_codebook: np.ndarray
    value_codebook: np.ndarray
    query_vector: np.ndarray


@dataclass(frozen=True)
class ToyAlignTask:
    key_ids: np.ndarray
    key_embeddings: np.ndarray
    query_inputs: np.ndarray
    targets: np.ndarray
    ideal: np.ndarray
    noise_sigma: float

    @property
    def lq(self) -> int:
        return self.query_inputs.shape[0]

    @property
    def lk(self) -> int:
        return self.key_embeddings.shape[0]


@dataclass(frozen=True)
class TrainRecord:
    step: int
    train_loss: float
    eval_loss: float
    eval_alignment_error: float


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, records: list[TrainRecord]):
        super().__init__(message)
        self.records = records


def ideal_path(lq: int, lk: int) -> np.ndarray:
    """Monotone key index for each query row, rounding halves up."""
    if lq < 2:
        raise ValueError(f"ideal path needs at least two query rows, got {lq}")
    m = np.arange(lq)
    return np.floor(m * (lk - 1) / (lq - 1) + 0.5).astype(np.int64)


def make_world(cfg: TrainConfig) -> ToyWorld:
    """Standard-normal key/value codebooks and query vector drawn from ``cfg.seed``.

    The last key coordinate is overwritten with ``KEY_BIAS``.
    """
    rng = make_rng(cfg.seed, WORLD_STREAM)
    keys = rng.standard_normal((cfg.vocab, cfg.d_model))
    keys[:, -1] = KEY_BIAS
    values = rng.standard_normal((cfg.vocab, cfg.d_model))
    query = rng.standard_normal(cfg.d_model)
    return ToyWorld(keys, values, query)


def build_task(world: ToyWorld, key_ids, lq: int, noise, noise_sigma: float) -> ToyAlignTask:
    """Assemble a task from explicit ids and query length; ``noise`` is an lq x d_model draw or None."""
    key_ids = np.asarray(key_ids, dtype=np.int64)
    ideal = ideal_path(lq, len(key_ids))
    targets = world.value_codebook[key_ids[ideal]]
    if noise is not None and noise_sigma > 0:
        targets = targets + noise_sigma * noise
    queries = np.tile(world.query_vector, (lq, 1))
    return ToyAlignTask(key_ids, world.key_codebook[key_ids], queries, targets, ideal, noise_sigma)


def generate_task(rng: np.random.Generator, cfg: TrainConfig, world: ToyWorld | None = None,
                  lk_range: tuple[int, int] | None = None) -> ToyAlignTask:
    """Draw one task: L_k uniform on ``lk_range``, ratio r uniform on ``cfg.ratio_range``, L_q = round(r L_k)."""
    world = world if world is not None else make_world(cfg)
    lo, hi = lk_range if lk_range is not None else cfg.lk_range
    rlo, rhi = cfg.ratio_range
    if lo > hi or rlo > rhi:
        raise ValueError(f"empty sampling range: lk {lo}..{hi}, ratio {rlo}..{rhi}")
    lk = int(rng.integers(lo, hi + 1))
    ratio = float(rng.uniform(rlo, rhi))
    lq = max(2, int(math.floor(ratio * lk + 0.5)))
    key_ids = rng.integers(0, cfg.vocab, size=lk)
    noise = rng.standard_normal((lq, cfg.d_model))
    return build_task(world, key_ids, lq, noise, cfg.noise_sigma)


def make_task_set(cfg: TrainConfig, world: ToyWorld, rng: np.random.Generator, count: int = EVAL_TASKS,
                  lk_range: tuple[int, int] | None = None) -> list[ToyAlignTask]:
    return [generate_task(rng, cfg, world, lk_range) for _ in range(count)]


def eval_task_set(cfg: TrainConfig, world: ToyWorld) -> list[ToyAlignTask]:
    """The fixed held-out set: 32 tasks drawn from ``seed + 1``."""
    return make_task_set(cfg, world, make_rng(cfg.seed + 1, EVAL_STREAM))


def long_task_set(cfg: TrainConfig, world: ToyWorld, lk_range=(32, 64), count: int = EVAL_TASKS
                  ) -> list[ToyAlignTask]:
    """Held-out tasks with texts longer than anything seen in training."""
    return make_task_set(cfg, world, make_rng(cfg.seed + 1, LONG_STREAM), count, lk_range)


def task_loss(layer: CrossAttentionLayer, task: ToyAlignTask):
    """Mean squared error of one task, its attention map and forward cache."""
    out, smap, cache = forward(layer, task.query_inputs, task.key_embeddings, return_cache=True)
    resid = out.values - task.targets
    return float(np.mean(resid**2)), resid, smap, cache


def batch_gradients(layer: CrossAttentionLayer, tasks) -> tuple[float, dict[str, np.ndarray]]:
    grads = {name: np.zeros_like(p) for name, p in layer.params().items()}
    total = 0.0
    for task in tasks:
        loss, resid, _, cache = task_loss(layer, task)
        total += loss
        g = backward(layer, cache, 2.0 * resid / (resid.size * len(tasks)))
        for name in PARAM_NAMES:
            grads[name] += getattr(g, name)
    return total / len(tasks), grads


def sgd_step(layer: CrossAttentionLayer, grads: dict[str, np.ndarray], lr: float) -> None:
    for name in PARAM_NAMES:
        getattr(layer, name)[...] -= lr * grads[name]


def evaluate(layer: CrossAttentionLayer, tasks) -> tuple[float, float]:
    """Mean (loss, alignment error) over ``tasks``."""
    losses, errors = [], []
    for task in tasks:
        loss, _, smap, _ = task_loss(layer, task)
        losses.append(loss)
        errors.append(alignment_error(smap.post_softmax, task.ideal))
    return float(np.mean(losses)), float(np.mean(errors))


def fit_task(layer: CrossAttentionLayer, task: ToyAlignTask, lr: float, steps: int) -> list[float]:
    """Plain SGD on one frozen task; returns the loss before each update."""
    losses = []
    for _ in range(steps):
        loss, grads = batch_gradients(layer, [task])
        losses.append(loss)
        sgd_step(layer, grads, lr)
    return losses


@dataclass
class TrainResult:
    cfg: TrainConfig
    layer: CrossAttentionLayer
    records: list[TrainRecord] = field(default_factory=list)

    @property
    def final(self) -> TrainRecord:
        return self.records[-1]


def train(cfg: TrainConfig) -> TrainResult:
    """Plain SGD on fresh tasks every step.

    A record is emitted before the first update (step 0), then every
    ``eval_interval`` updates and after the last one. ``train_loss`` is the
    mean loss of the most recent batch, measured before its update.
    Raises ``TrainingDiverged`` (carrying the records so far plus a NaN-bearing
    diagnostic record) if the loss or parameters become non-finite.
    """
    world = make_world(cfg)
    init_rng = make_rng(cfg.seed, INIT_STREAM)
    layer = CrossAttentionLayer.init(cfg.d_model, cfg.rotary(), init_rng)
    task_rng = make_rng(cfg.seed, TRAIN_STREAM)
    eval_set = eval_task_set(cfg, world)

    result = TrainResult(cfg, layer)
    # overflow is detected explicitly below and reported as divergence
    with np.errstate(over="ignore", invalid="ignore"):
        _run(cfg, world, layer, task_rng, eval_set, result)
    return result


def _run(cfg, world, layer, task_rng, eval_set, result) -> None:
    initial_eval = evaluate(layer, eval_set)
    for step in range(1, cfg.steps + 1):
        batch = [generate_task(task_rng, cfg, world) for _ in range(cfg.batch_size)]
        loss, grads = batch_gradients(layer, batch)
        if step == 1:
            result.records.append(TrainRecord(0, loss, *initial_eval))
        if not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
            result.records.append(TrainRecord(step, loss, math.nan, math.nan))
            raise TrainingDiverged(f"non-finite loss or gradient at step {step}", result.records)
        sgd_step(layer, grads, cfg.lr)
        if step % cfg.eval_interval == 0 or step == cfg.steps:
            eval_loss, eval_err = evaluate(layer, eval_set)
            if not (math.isfinite(eval_loss) and math.isfinite(eval_err)):
                result.records.append(TrainRecord(step, loss, eval_loss, eval_err))
                raise TrainingDiverged(f"non-finite evaluation at step {step}", result.records)
            result.records.append(TrainRecord(step, loss, eval_loss, eval_err))
            log.debug("step %d loss %.5f eval %.5f align %.4f", step, loss, eval_loss, eval_err)


def rescale_task(world: ToyWorld, task: ToyAlignTask, factor: float) -> ToyAlignTask | None:
    """Same text, query length multiplied by ``factor``; ``None`` if fewer than two frames remain."""
    lq = int(math.floor(factor * task.lq + 0.5))
    if lq < 2:
        return None
    return build_task(world, task.key_ids, lq, None, 0.0)


def eval_duration_scaling(layer: CrossAttentionLayer, world: ToyWorld, tasks, factors
                          ) -> tuple[list[float], int]:
    """Mean alignment error per factor and the number of skipped (too short) tasks.

    Factor 1.0 reproduces the standard evaluation exactly. A factor for which
    every task is skipped reports NaN.
    """
    errors, skipped = [], 0
    for f in factors:
        if not f > 0:
            raise ValueError(f"duration factors must be positive, got {f}")
        per_task = []
        for task in tasks:
            scaled = task if f == 1.0 else rescale_task(world, task, f)
            if scaled is None:
                skipped += 1
                continue
            _, smap = forward(layer, scaled.query_inputs, scaled.key_embeddings)
            per_task.append(alignment_error(smap.post_softmax, scaled.ideal))
        errors.append(float(np.mean(per_task)) if per_task else math.nan)
    if skipped:
        log.warning("skipped %d rescaled task(s) with fewer than two query frames", skipped)
    return errors, skipped


def save_state(result: TrainResult, path) -> None:
    """Dump config and parameters as JSON; floats round-trip exactly via ``repr``."""
    doc = {
        "format": "larope-toy-state/1",
        "config": result.cfg.to_json(),
        "params": {name: p.tolist() for name, p in result.layer.params().items()},
        "final": asdict(result.final),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_state(path) -> tuple[TrainConfig, CrossAttentionLayer, dict]:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != "larope-toy-state/1":
        raise ValueError(f"{path}: not a toy-alignment state file")
    cfg = TrainConfig.from_json(doc["config"])
    p = doc["params"]
    layer = CrossAttentionLayer(*(np.array(p[n], dtype=np.float64) for n in PARAM_NAMES), cfg.rotary())
    return cfg, layer, doc.get("final", {})
