import math

import numpy as np
import pytest

from kicrank.kg import Query, make_queries
from kicrank.retriever import (
    CheckpointError,
    RetrieverModel,
    TrainConfig,
    TrainingError,
    adversarial_weights,
    initialize_model,
    load_model,
    loss_and_grads,
    rank_all,
    save_model,
    score,
    train,
)
from kicrank.synth import cycle_kg, random_kg


def tiny_model(ent, phases, gamma=6.0):
    ent = np.asarray(ent, dtype=float)
    return RetrieverModel(
        ent_re=ent[:, 0, :].copy(),
        ent_im=ent[:, 1, :].copy(),
        rel_phase=np.asarray(phases, dtype=float),
        gamma=gamma,
        seed=0,
    )


def naive_score(model, h, r, t):
    """Independent complex-arithmetic reimplementation of the score."""
    z_h = model.ent_re[h] + 1j * model.ent_im[h]
    z_t = model.ent_re[t] + 1j * model.ent_im[t]
    rot = np.exp(1j * model.rel_phase[r])
    return -float(np.abs(z_h * rot - z_t).sum())


def test_identity_rotation_is_maximal():
    model = tiny_model([[[1.0], [0.0]], [[1.0], [0.0]], [[0.5], [0.5]]], [[0.0]])
    q = Query("tail", 0, 0, 1)
    assert score(model, q, 1) == 0.0
    assert all(score(model, q, 1) >= score(model, q, c) for c in range(3))


def test_half_turn_rotation():
    model = tiny_model([[[1.0], [0.0]], [[-1.0], [0.0]]], [[math.pi]])
    assert abs(score(model, Query("tail", 0, 0, 1), 1)) < 1e-9


def test_score_matches_naive_reimplementation():
    model = initialize_model(8, 3, TrainConfig(dim=6, seed=21))
    rng = np.random.default_rng(3)
    for _ in range(50):
        h, t = rng.integers(0, 8, size=2)
        r = int(rng.integers(0, 3))
        tail_q = Query("tail", int(h), r, int(t))
        head_q = Query("head", int(t), r, int(h))
        assert score(model, tail_q, int(t)) == pytest.approx(naive_score(model, h, r, t), abs=1e-9)
        assert score(model, head_q, int(h)) == pytest.approx(naive_score(model, h, r, t), abs=1e-9)


def test_rank_all_matches_per_candidate_scores():
    model = initialize_model(12, 2, TrainConfig(dim=4, seed=2))
    q = Query("head", 5, 1, 0)
    ranking = rank_all(model, q, m=3)
    per_entity = [score(model, q, e) for e in range(12)]
    expected = sorted(range(12), key=lambda e: (-per_entity[e], e))
    assert list(ranking.entity_order) == expected
    assert all(ranking.scores[i] >= ranking.scores[i + 1] for i in range(11))


def test_rank_all_ties_break_by_entity_id():
    # All entities identical: every score ties, order must be 0..E-1.
    ent = [[[0.3, -0.2], [0.1, 0.4]]] * 5
    model = tiny_model(ent, [[0.7, -1.2]])
    ranking = rank_all(model, Query("tail", 0, 0, 1), m=2)
    assert list(ranking.entity_order) == [0, 1, 2, 3, 4]


def test_rank_all_is_permutation():
    model = initialize_model(30, 2, TrainConfig(dim=4, seed=8))
    for q in (Query("tail", 3, 0, 1), Query("head", 9, 1, 2)):
        order = rank_all(model, q).entity_order
        assert sorted(order.tolist()) == list(range(30))


def test_rotation_round_trip_returns_to_start():
    # Composing theta then -theta is the identity at d=2.
    rng = np.random.default_rng(0)
    z_re, z_im = rng.normal(size=2), rng.normal(size=2)
    theta = rng.uniform(-np.pi, np.pi, size=2)
    cos, sin = np.cos(theta), np.sin(theta)
    f_re, f_im = z_re * cos - z_im * sin, z_re * sin + z_im * cos
    cos_b, sin_b = np.cos(-theta), np.sin(-theta)
    b_re, b_im = f_re * cos_b - f_im * sin_b, f_re * sin_b + f_im * cos_b
    np.testing.assert_allclose([b_re, b_im], [z_re, z_im], atol=1e-12)


def test_zero_steps_leaves_model_unchanged():
    kg = random_kg(n_entities=10, n_train=20, n_valid=2, n_test=2, seed=4)
    cfg = TrainConfig(dim=8, steps=0, seed=1)
    model = initialize_model(kg.n_entities, kg.n_relations, cfg)
    before = (model.ent_re.copy(), model.ent_im.copy(), model.rel_phase.copy())
    report = train(model, kg, cfg)
    assert report.steps == 0 and report.losses == []
    for now, then in zip((model.ent_re, model.ent_im, model.rel_phase), before):
        assert np.array_equal(now, then)


def test_training_is_bitwise_deterministic():
    kg = random_kg(n_entities=15, n_train=40, n_valid=4, n_test=4, seed=6)
    cfg = TrainConfig(dim=8, steps=40, batch_size=8, negatives_per_positive=4, seed=123)
    runs = []
    for _ in range(2):
        model = initialize_model(kg.n_entities, kg.n_relations, cfg)
        runs.append(train(model, kg, cfg).losses)
    assert runs[0] == runs[1]


def test_non_finite_loss_aborts_with_diagnostic():
    kg = random_kg(n_entities=10, n_train=20, n_valid=2, n_test=2, seed=4)
    cfg = TrainConfig(dim=4, steps=5, seed=1)
    model = initialize_model(kg.n_entities, kg.n_relations, cfg)
    model.ent_re[0, 0] = np.nan
    with np.errstate(invalid="ignore"):
        with pytest.raises(TrainingError, match="non-finite loss"):
            train(model, kg, cfg)


def test_relation_modulus_structurally_unit():
    kg = random_kg(n_entities=20, n_train=60, n_valid=5, n_test=5, seed=2)
    cfg = TrainConfig(dim=8, steps=100, batch_size=8, negatives_per_positive=4, seed=9)
    model = initialize_model(kg.n_entities, kg.n_relations, cfg)
    assert model.relation_unit_modulus_deviation() <= 1e-6
    train(model, kg, cfg)
    assert model.relation_unit_modulus_deviation() <= 1e-6


def test_gradients_match_finite_differences():
    cfg = TrainConfig(dim=4, gamma=2.0, seed=5)
    model = initialize_model(3, 2, cfg)
    pos = np.array([[0, 0, 1], [2, 1, 0]])
    neg = np.array([[1, 2, 0], [0, 1, 2]])
    ch = np.array([[True, False, True], [False, True, False]])
    weights = adversarial_weights(model, pos, neg, ch, cfg)
    _, grads = loss_and_grads(model, pos, neg, ch, cfg, weights=weights)
    eps = 1e-6
    for name, arr in (("ent_re", model.ent_re), ("ent_im", model.ent_im), ("rel_phase", model.rel_phase)):
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + eps
            up, _ = loss_and_grads(model, pos, neg, ch, cfg, weights=weights)
            arr[idx] = orig - eps
            down, _ = loss_and_grads(model, pos, neg, ch, cfg, weights=weights)
            arr[idx] = orig
            fd = (up - down) / (2 * eps)
            denom = max(abs(fd), abs(grads[name][idx]), 1e-8)
            assert abs(fd - grads[name][idx]) / denom < 1e-4, (name, idx)


def test_training_improves_mean_rank_over_untrained():
    kg = cycle_kg(60, seed=3)
    cfg = TrainConfig(dim=32, steps=400, batch_size=16, negatives_per_positive=4, seed=17)
    untrained = initialize_model(kg.n_entities, kg.n_relations, cfg)
    trained = initialize_model(kg.n_entities, kg.n_relations, cfg)
    train(trained, kg, cfg)
    queries = make_queries(kg, "test")[:100]

    def mean_rank(model):
        total = 0
        for q in queries:
            order = rank_all(model, q).entity_order
            total += int(np.where(order == q.answer)[0][0]) + 1
        return total / len(queries)

    assert mean_rank(trained) < mean_rank(untrained)


def test_checkpoint_round_trip_preserves_scores(tmp_path):
    model = initialize_model(9, 3, TrainConfig(dim=5, seed=77))
    path = tmp_path / "model.ckpt"
    save_model(model, path)
    loaded = load_model(path)
    q = Query("tail", 2, 1, 4)
    for cand in range(9):
        assert abs(score(model, q, cand) - score(loaded, q, cand)) <= 1e-12
    assert loaded.gamma == model.gamma and loaded.seed == model.seed


def test_truncated_checkpoint_fails_checksum(tmp_path):
    model = initialize_model(6, 2, TrainConfig(dim=4, seed=1))
    path = tmp_path / "model.ckpt"
    save_model(model, path)
    blob = path.read_bytes()
    path.write_bytes(blob[:-16])
    with pytest.raises(CheckpointError, match="checksum"):
        load_model(path)


def test_corrupted_payload_fails_checksum(tmp_path):
    model = initialize_model(6, 2, TrainConfig(dim=4, seed=1))
    path = tmp_path / "model.ckpt"
    save_model(model, path)
    blob = bytearray(path.read_bytes())
    blob[-1] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="checksum"):
        load_model(path)


def test_not_a_checkpoint_rejected(tmp_path):
    path = tmp_path / "junk.ckpt"
    path.write_bytes(b"not a checkpoint at all")
    with pytest.raises(CheckpointError, match="not a retriever checkpoint"):
        load_model(path)


def test_fresh_init_checkpoint_equals_reinitialization(tmp_path):
    cfg = TrainConfig(dim=6, seed=314)
    first, second = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_model(initialize_model(7, 2, cfg), first)
    save_model(initialize_model(7, 2, cfg), second)
    assert first.read_bytes() == second.read_bytes()
