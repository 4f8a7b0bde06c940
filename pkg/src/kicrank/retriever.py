"""Complex-rotation embedding retriever.

Entities are complex vectors; each relation is a vector of phases acting
as an element-wise rotation. A triple (h, r, t) is scored by the negated
L1 norm of h*r - t, where each coordinate contributes its complex
modulus. Training minimises the self-adversarial negative-sampling
objective with plain SGD so that runs are bit-reproducible from a seed.

All gradients are computed analytically in numpy; ``loss_and_grads`` is
a pure function of (model, batch) and is what the finite-difference
checks exercise.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .kg import TAIL_MISSING, KnowledgeGraph, Query

CHECKPOINT_MAGIC = b"KICRANK-CKPT\n"
CHECKPOINT_VERSION = 1


class TrainingError(Exception):
    pass


class CheckpointError(Exception):
    pass


@dataclass
class TrainConfig:
    dim: int = 64
    batch_size: int = 32
    negatives_per_positive: int = 8
    gamma: float = 6.0
    adversarial_temperature: float = 1.0
    learning_rate: float = 0.2
    steps: int = 2000
    seed: int = 0

    def validate(self):
        for name in ("dim", "batch_size", "negatives_per_positive", "steps"):
            if getattr(self, name) < (0 if name == "steps" else 1):
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.gamma <= 0 or self.learning_rate <= 0 or self.adversarial_temperature <= 0:
            raise ValueError("gamma, learning_rate and adversarial_temperature must be positive")


@dataclass
class RetrieverModel:
    """Embedding tables. Relations are stored as phases, so their
    complex form has modulus one by construction."""

    ent_re: np.ndarray
    ent_im: np.ndarray
    rel_phase: np.ndarray
    gamma: float
    seed: int

    @property
    def dim(self) -> int:
        return self.ent_re.shape[1]

    @property
    def n_entities(self) -> int:
        return self.ent_re.shape[0]

    @property
    def n_relations(self) -> int:
        return self.rel_phase.shape[0]

    def relation_unit_modulus_deviation(self) -> float:
        """Max |modulus - 1| of the materialised relation coordinates."""
        modulus = np.hypot(np.cos(self.rel_phase), np.sin(self.rel_phase))
        if modulus.size == 0:
            return 0.0
        return float(np.abs(modulus - 1.0).max())


@dataclass
class TrainingReport:
    losses: list[float] = field(default_factory=list)
    steps: int = 0
    seconds: float = 0.0


@dataclass
class Ranking:
    """All entities in descending score order; ties broken by id."""

    entity_order: np.ndarray
    scores: np.ndarray
    m: int

    def top(self, m: int | None = None) -> list[int]:
        m = self.m if m is None else m
        return [int(e) for e in self.entity_order[:m]]


def initialize_model(n_entities: int, n_relations: int, config: TrainConfig) -> RetrieverModel:
    """Seeded uniform init; the entity range follows the usual
    (gamma + 2) / dim scaling, phases are uniform over the circle."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    bound = (config.gamma + 2.0) / config.dim
    ent_re = rng.uniform(-bound, bound, size=(n_entities, config.dim))
    ent_im = rng.uniform(-bound, bound, size=(n_entities, config.dim))
    rel_phase = rng.uniform(-np.pi, np.pi, size=(n_relations, config.dim))
    return RetrieverModel(ent_re, ent_im, rel_phase, gamma=config.gamma, seed=config.seed)


def _rotate(re, im, cos, sin):
    return re * cos - im * sin, re * sin + im * cos


def triple_distance(model: RetrieverModel, heads, relations, tails) -> np.ndarray:
    """Sum over coordinates of |h*r - t|, vectorised over leading axes."""
    heads = np.asarray(heads)
    cos = np.cos(model.rel_phase[relations])
    sin = np.sin(model.rel_phase[relations])
    hr_re, hr_im = _rotate(model.ent_re[heads], model.ent_im[heads], cos, sin)
    u_re = hr_re - model.ent_re[tails]
    u_im = hr_im - model.ent_im[tails]
    return np.hypot(u_re, u_im).sum(axis=-1)


def score(model: RetrieverModel, query: Query, candidate: int) -> float:
    """Negated rotation distance; larger means more plausible."""
    if query.direction == TAIL_MISSING:
        d = triple_distance(model, [query.anchor], [query.relation], [candidate])
    else:
        d = triple_distance(model, [candidate], [query.relation], [query.anchor])
    return float(-d[0])


def rank_all(model: RetrieverModel, query: Query, m: int = 10) -> Ranking:
    """Score every entity as the missing slot and sort descending,
    breaking ties by ascending entity id."""
    cos = np.cos(model.rel_phase[query.relation])
    sin = np.sin(model.rel_phase[query.relation])
    if query.direction == TAIL_MISSING:
        hr_re, hr_im = _rotate(model.ent_re[query.anchor], model.ent_im[query.anchor], cos, sin)
        u_re = hr_re[None, :] - model.ent_re
        u_im = hr_im[None, :] - model.ent_im
    else:
        er_re, er_im = _rotate(model.ent_re, model.ent_im, cos[None, :], sin[None, :])
        u_re = er_re - model.ent_re[query.anchor][None, :]
        u_im = er_im - model.ent_im[query.anchor][None, :]
    scores = -np.hypot(u_re, u_im).sum(axis=1)
    order = np.lexsort((np.arange(scores.shape[0]), -scores))
    m = max(1, min(m, scores.shape[0]))
    return Ranking(entity_order=order, scores=scores[order], m=m)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _softplus(x):
    return np.logaddexp(0.0, x)


def _safe_unit(u_re, u_im, modulus):
    ok = modulus > 0.0
    n_re = np.divide(u_re, modulus, out=np.zeros_like(u_re), where=ok)
    n_im = np.divide(u_im, modulus, out=np.zeros_like(u_im), where=ok)
    return n_re, n_im


def loss_and_grads(
    model: RetrieverModel,
    positives: np.ndarray,
    neg_entities: np.ndarray,
    corrupt_head: np.ndarray,
    config: TrainConfig,
    weights: np.ndarray | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Self-adversarial loss and its exact gradients for one batch.

    ``positives`` is [B, 3] (h, r, t); ``neg_entities`` is [B, N] entity
    ids replacing the head where ``corrupt_head`` is true, the tail
    otherwise. The softmax weights over negatives are constants of the
    gradient, as in the original objective; pass ``weights`` to pin them
    explicitly (finite-difference checks must evaluate the loss at fixed
    weights to probe the same function the optimizer steps on).
    """
    gamma, alpha = config.gamma, config.adversarial_temperature
    h_ids, r_ids, t_ids = positives[:, 0], positives[:, 1], positives[:, 2]
    B, N = neg_entities.shape

    cos = np.cos(model.rel_phase[r_ids])
    sin = np.sin(model.rel_phase[r_ids])
    h_re, h_im = model.ent_re[h_ids], model.ent_im[h_ids]
    t_re, t_im = model.ent_re[t_ids], model.ent_im[t_ids]
    hr_re, hr_im = _rotate(h_re, h_im, cos, sin)

    # Positive distances.
    up_re, up_im = hr_re - t_re, hr_im - t_im
    mp = np.hypot(up_re, up_im)
    d_pos = mp.sum(axis=1)

    # Negative distances: both corruption variants are computed and the
    # per-sample mask picks one; at desk scale this beats index juggling.
    ne_re, ne_im = model.ent_re[neg_entities], model.ent_im[neg_entities]
    cosb, sinb = cos[:, None, :], sin[:, None, :]
    nr_re, nr_im = _rotate(ne_re, ne_im, cosb, sinb)
    mask = corrupt_head[:, :, None]
    un_re = np.where(mask, nr_re - t_re[:, None, :], hr_re[:, None, :] - ne_re)
    un_im = np.where(mask, nr_im - t_im[:, None, :], hr_im[:, None, :] - ne_im)
    mn = np.hypot(un_re, un_im)
    d_neg = mn.sum(axis=2)

    # Loss. softmax weights are detached.
    if weights is None:
        logits = -alpha * d_neg
        logits -= logits.max(axis=1, keepdims=True)
        w = np.exp(logits)
        w /= w.sum(axis=1, keepdims=True)
    else:
        w = weights
    loss_pos = _softplus(d_pos - gamma)
    loss_neg = (w * _softplus(gamma - d_neg)).sum(axis=1)
    loss = float(np.mean(0.5 * (loss_pos + loss_neg)))

    # Backward. coef arrays are dLoss/d(distance).
    coef_pos = _sigmoid(d_pos - gamma) / (2.0 * B)
    coef_neg = -(w * _sigmoid(gamma - d_neg)) / (2.0 * B)

    grads = {
        "ent_re": np.zeros_like(model.ent_re),
        "ent_im": np.zeros_like(model.ent_im),
        "rel_phase": np.zeros_like(model.rel_phase),
    }

    # Positive path.
    np_re, np_im = _safe_unit(up_re, up_im, mp)
    gp_re = coef_pos[:, None] * np_re
    gp_im = coef_pos[:, None] * np_im
    gh_re = gp_re * cos + gp_im * sin
    gh_im = -gp_re * sin + gp_im * cos
    gtheta = gp_im * hr_re - gp_re * hr_im
    np.add.at(grads["ent_re"], h_ids, gh_re)
    np.add.at(grads["ent_im"], h_ids, gh_im)
    np.add.at(grads["ent_re"], t_ids, -gp_re)
    np.add.at(grads["ent_im"], t_ids, -gp_im)

    # Negative path.
    nn_re, nn_im = _safe_unit(un_re, un_im, mn)
    gn_re = coef_neg[:, :, None] * nn_re
    gn_im = coef_neg[:, :, None] * nn_im

    # Gradient on the corrupting entity.
    ge_re = np.where(mask, gn_re * cosb + gn_im * sinb, -gn_re)
    ge_im = np.where(mask, -gn_re * sinb + gn_im * cosb, -gn_im)
    np.add.at(grads["ent_re"], neg_entities, ge_re)
    np.add.at(grads["ent_im"], neg_entities, ge_im)

    # Gradient on the intact positive-side entity.
    head_side = np.where(mask, np.zeros_like(gn_re), gn_re)
    tail_side = np.where(mask, -gn_re, np.zeros_like(gn_re))
    head_side_im = np.where(mask, np.zeros_like(gn_im), gn_im)
    tail_side_im = np.where(mask, -gn_im, np.zeros_like(gn_im))
    gh2_re = head_side.sum(axis=1)
    gh2_im = head_side_im.sum(axis=1)
    np.add.at(grads["ent_re"], h_ids, gh2_re * cos + gh2_im * sin)
    np.add.at(grads["ent_im"], h_ids, -gh2_re * sin + gh2_im * cos)
    np.add.at(grads["ent_re"], t_ids, tail_side.sum(axis=1))
    np.add.at(grads["ent_im"], t_ids, tail_side_im.sum(axis=1))

    # Phase gradient: rotated-head coordinates for tail corruption,
    # rotated-negative coordinates for head corruption.
    rot_re = np.where(mask, nr_re, hr_re[:, None, :])
    rot_im = np.where(mask, nr_im, hr_im[:, None, :])
    gtheta += (gn_im * rot_re - gn_re * rot_im).sum(axis=1)
    np.add.at(grads["rel_phase"], r_ids, gtheta)

    return loss, grads


def adversarial_weights(
    model: RetrieverModel,
    positives: np.ndarray,
    neg_entities: np.ndarray,
    corrupt_head: np.ndarray,
    config: TrainConfig,
) -> np.ndarray:
    """Softmax weights over each positive's negatives at the current
    parameters, as used (detached) inside ``loss_and_grads``."""
    h_ids, r_ids, t_ids = positives[:, 0], positives[:, 1], positives[:, 2]
    cos = np.cos(model.rel_phase[r_ids])
    sin = np.sin(model.rel_phase[r_ids])
    hr_re, hr_im = _rotate(model.ent_re[h_ids], model.ent_im[h_ids], cos, sin)
    ne_re, ne_im = model.ent_re[neg_entities], model.ent_im[neg_entities]
    nr_re, nr_im = _rotate(ne_re, ne_im, cos[:, None, :], sin[:, None, :])
    mask = corrupt_head[:, :, None]
    t_re, t_im = model.ent_re[t_ids], model.ent_im[t_ids]
    un_re = np.where(mask, nr_re - t_re[:, None, :], hr_re[:, None, :] - ne_re)
    un_im = np.where(mask, nr_im - t_im[:, None, :], hr_im[:, None, :] - ne_im)
    d_neg = np.hypot(un_re, un_im).sum(axis=2)
    logits = -config.adversarial_temperature * d_neg
    logits -= logits.max(axis=1, keepdims=True)
    w = np.exp(logits)
    w /= w.sum(axis=1, keepdims=True)
    return w


def _triple_codes(triples: np.ndarray, n_entities: int, n_relations: int) -> np.ndarray:
    return (triples[:, 0].astype(np.int64) * n_relations + triples[:, 1]) * n_entities + triples[:, 2]


def train(model: RetrieverModel, kg: KnowledgeGraph, config: TrainConfig) -> TrainingReport:
    """SGD over the train split; the model is updated in place.

    Negative corruptions that reconstruct a known train triple are
    resampled a bounded number of rounds. Every random draw comes from
    one generator seeded by ``config.seed``, so identical configs give
    bitwise-identical loss curves.
    """
    config.validate()
    report = TrainingReport()
    if config.steps == 0 or not kg.train:
        return report
    started = time.perf_counter()
    rng = np.random.default_rng(config.seed)
    train_arr = np.asarray(kg.train, dtype=np.int64)
    n_train = train_arr.shape[0]
    E = model.n_entities
    known_codes = np.sort(_triple_codes(train_arr, E, model.n_relations))

    B, N = config.batch_size, config.negatives_per_positive
    for step in range(config.steps):
        pos = train_arr[rng.integers(0, n_train, size=B)]
        neg = rng.integers(0, E, size=(B, N))
        corrupt_head = rng.integers(0, 2, size=(B, N)).astype(bool)

        # Reject corruptions that are real train triples.
        for _ in range(20):
            cand = np.where(
                corrupt_head,
                (neg * model.n_relations + pos[:, 1][:, None]) * E + pos[:, 2][:, None],
                (pos[:, 0][:, None].astype(np.int64) * model.n_relations + pos[:, 1][:, None]) * E + neg,
            )
            hits = known_codes[np.searchsorted(known_codes, cand).clip(max=known_codes.size - 1)] == cand
            if not hits.any():
                break
            neg[hits] = rng.integers(0, E, size=int(hits.sum()))

        loss, grads = loss_and_grads(model, pos, neg, corrupt_head, config)
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite loss {loss!r} at step {step}; lower the learning rate")
        model.ent_re -= config.learning_rate * grads["ent_re"]
        model.ent_im -= config.learning_rate * grads["ent_im"]
        model.rel_phase -= config.learning_rate * grads["rel_phase"]
        report.losses.append(loss)

    report.steps = config.steps
    report.seconds = time.perf_counter() - started
    return report


def save_model(model: RetrieverModel, path: str | Path) -> None:
    """Write a deterministic, checksummed binary checkpoint."""
    payload = b"".join(
        np.ascontiguousarray(a, dtype=np.float64).tobytes()
        for a in (model.ent_re, model.ent_im, model.rel_phase)
    )
    header = {
        "format_version": CHECKPOINT_VERSION,
        "dim": model.dim,
        "n_entities": model.n_entities,
        "n_relations": model.n_relations,
        "gamma": model.gamma,
        "seed": model.seed,
        "checksum": hashlib.sha256(payload).hexdigest(),
    }
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        fh.write(payload)


def load_model(path: str | Path) -> RetrieverModel:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: not a retriever checkpoint")
        try:
            header = json.loads(fh.readline().decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"{path}: corrupt header: {exc}") from exc
        if header.get("format_version") != CHECKPOINT_VERSION:
            raise CheckpointError(
                f"{path}: format version {header.get('format_version')!r} unsupported "
                f"(expected {CHECKPOINT_VERSION})"
            )
        payload = fh.read()
    if hashlib.sha256(payload).hexdigest() != header["checksum"]:
        raise CheckpointError(f"{path}: checksum mismatch; file is corrupt or truncated")
    E, R, d = header["n_entities"], header["n_relations"], header["dim"]
    flat = np.frombuffer(payload, dtype=np.float64)
    expected = E * d * 2 + R * d
    if flat.size != expected:
        raise CheckpointError(f"{path}: payload holds {flat.size} values, expected {expected}")
    ent_re = flat[: E * d].reshape(E, d).copy()
    ent_im = flat[E * d : 2 * E * d].reshape(E, d).copy()
    rel_phase = flat[2 * E * d :].reshape(R, d).copy()
    return RetrieverModel(ent_re, ent_im, rel_phase, gamma=header["gamma"], seed=header["seed"])
