"""Projection head, hinge losses, analytic gradients, optimizer, checkpoints.

The gradient tests compare the analytic path against central finite
differences. Hinge losses and the frozen top-K correction make the loss
piecewise smooth, so instances are resampled until every decision (hinge
activity, local argmax, top-K membership) sits safely away from its
boundary; only then is the finite-difference comparison meaningful.
"""

from __future__ import annotations

import copy
import struct

import numpy as np
import pytest

from coarse2fine.model import (
    Batch,
    BatchItem,
    LossConfig,
    ModelState,
    TrainingError,
    hinge_rank_loss,
    init_model,
    load_checkpoint,
    loss_and_gradients,
    loss_coarse_global,
    loss_global,
    loss_local,
    optimizer_step,
    project,
    save_checkpoint,
    second_best_margin_loss,
)
from coarse2fine.similarity import SimilarityConfig

PARAMS = ("W1", "b1", "W2", "b2")


# ---------------------------------------------------------------------------
# Configuration and initialization


def test_loss_config_defaults_and_validation():
    cfg = LossConfig()
    assert cfg.margin_global == 0.05
    assert cfg.margin_local == 0.05
    assert cfg.learning_rate == 2e-4
    assert cfg.literal_hinge_sign is False
    with pytest.raises(ValueError, match="margins"):
        LossConfig(margin_global=0.0)
    with pytest.raises(ValueError, match="margins"):
        LossConfig(margin_local=-0.1)
    with pytest.raises(ValueError, match="batch_size"):
        LossConfig(batch_size=0)
    with pytest.raises(ValueError, match="learning_rate"):
        LossConfig(learning_rate=0.0)


def test_init_model_is_near_identity():
    state = init_model(d_base=8, seed=0)
    assert state.params["W1"].shape == (8, 8)
    assert state.params["W2"].shape == (8, 8)
    assert state.params["b1"].shape == (8,)
    assert np.abs(state.params["W1"] - np.eye(8)).max() < 0.05
    assert np.abs(state.params["W2"] - 0.99 * np.eye(8)).max() < 0.05
    assert all(np.all(state.moment1[k] == 0.0) for k in PARAMS)
    assert all(np.all(state.moment2[k] == 0.0) for k in PARAMS)
    assert state.step == 0
    assert state.d_base == 8 and state.d_proj == 8


def test_init_model_with_projection_dim():
    state = init_model(d_base=8, d_proj=4, seed=1)
    assert state.params["W1"].shape == (8, 4)
    assert state.params["W2"].shape == (4, 4)
    assert state.d_base == 8 and state.d_proj == 4
    out = project(state, np.ones((3, 8)))
    assert out.shape == (3, 4)


def test_project_returns_unit_rows_and_squeezes_vectors():
    state = init_model(d_base=6, seed=2)
    rng = np.random.default_rng(0)
    X = rng.standard_normal((5, 6))
    Y = project(state, X)
    assert Y.shape == (5, 6)
    assert np.allclose(np.linalg.norm(Y, axis=1), 1.0, atol=1e-12)
    y = project(state, X[0])
    assert y.shape == (6,)
    assert np.allclose(y, Y[0], atol=1e-15)


def test_project_rejects_collapsed_output():
    state = init_model(d_base=3, seed=0)
    state.params["W1"][:] = 0.0  # tanh(0) = 0 and zero biases: |z| = 0
    state.params["b1"][:] = 0.0
    state.params["b2"][:] = 0.0
    with pytest.raises(TrainingError, match="collapsed.*row 0"):
        project(state, np.ones((2, 3)))


# ---------------------------------------------------------------------------
# Score-level losses: worked examples


def test_hinge_rank_loss_worked_examples():
    # positives comfortably above negatives: every pair inactive
    assert hinge_rank_loss([0.8, 0.6], [0.3, 0.1], margin=0.05) == 0.0
    # negative within the margin of its positive
    assert abs(hinge_rank_loss([0.5], [0.48], margin=0.05) - 0.03) < 1e-12
    # one active pair, one inactive: mean over pairs
    assert abs(hinge_rank_loss([0.5, 0.9], [0.48, 0.1], margin=0.05) - 0.015) < 1e-12
    assert hinge_rank_loss([], [], margin=0.05) == 0.0


def test_hinge_rank_loss_literal_sign_flips_the_orientation():
    # flipped orientation penalizes positives above negatives instead
    assert abs(hinge_rank_loss([0.8, 0.6], [0.3, 0.1], 0.05, literal_hinge_sign=True) - 0.55) < 1e-12
    assert hinge_rank_loss([0.1], [0.9], 0.05, literal_hinge_sign=True) == 0.0


def test_hinge_rank_loss_requires_paired_scores():
    with pytest.raises(ValueError, match="pair up"):
        hinge_rank_loss([0.5, 0.6], [0.1], margin=0.05)


def test_second_best_margin_loss_worked_examples():
    assert second_best_margin_loss([0.9, 0.7], 0, margin=0.05) == 0.0
    assert abs(second_best_margin_loss([0.8, 0.8], 0, margin=0.05) - 0.05) < 1e-12
    assert abs(second_best_margin_loss([0.5, 0.48, 0.2, 0.1], 0, margin=0.05) - 0.03) < 1e-12
    # assigned candidate is not the best: full deficit plus margin
    assert abs(second_best_margin_loss([0.5, 0.9], 0, margin=0.05) - 0.45) < 1e-12
    # nothing to separate with a single candidate
    assert second_best_margin_loss([0.7], 0, margin=0.05) == 0.0


# ---------------------------------------------------------------------------
# Vector-level losses against score-level oracles


def corrected_row(p, targets, fine, sim):
    from coarse2fine.similarity import base_scores, knn_means

    row = base_scores(p, targets, sim.metric)[0]
    if sim.metric == "cosine":
        return row
    return row - knn_means(base_scores(p, fine, sim.metric), sim.knn_k)[0]


@pytest.mark.parametrize("metric", ["csls", "cosine"])
def test_loss_global_equals_hinge_on_corrected_scores(metric):
    rng = np.random.default_rng(6)
    fine = rng.standard_normal((6, 5))
    p = rng.standard_normal(5)
    cfg = LossConfig()
    sim = SimilarityConfig(metric=metric, knn_k=3)
    row = corrected_row(p, fine, fine, sim)
    cands, negs = [0, 2], [4, 5]
    expected = hinge_rank_loss(row[cands], row[negs], cfg.margin_global)
    assert abs(loss_global(p, cands, negs, fine, cfg, sim) - expected) < 1e-12


def test_loss_global_without_negatives_is_zero():
    rng = np.random.default_rng(7)
    fine = rng.standard_normal((4, 3))
    assert loss_global(rng.standard_normal(3), [0], [], fine, LossConfig(), SimilarityConfig()) == 0.0


@pytest.mark.parametrize("metric", ["csls", "cosine"])
def test_loss_local_equals_second_best_margin(metric):
    rng = np.random.default_rng(8)
    fine = rng.standard_normal((6, 5))
    p = rng.standard_normal(5)
    cfg = LossConfig()
    sim = SimilarityConfig(metric=metric, knn_k=2)
    row = corrected_row(p, fine, fine, sim)
    cands = [1, 3, 4]
    expected = second_best_margin_loss(row[cands], cands.index(3), cfg.margin_local)
    assert abs(loss_local(p, 3, cands, fine, cfg, sim) - expected) < 1e-12


def test_loss_coarse_global_uses_fine_neighborhood_for_the_correction():
    rng = np.random.default_rng(9)
    fine = rng.standard_normal((5, 4))
    coarse = rng.standard_normal((3, 4))
    p = rng.standard_normal(4)
    cfg = LossConfig()
    sim = SimilarityConfig(metric="csls", knn_k=2)
    row = corrected_row(p, coarse, fine, sim)
    expected = hinge_rank_loss([row[1]], [row[2]], cfg.margin_global)
    assert abs(loss_coarse_global(p, 1, 2, fine, coarse, cfg, sim) - expected) < 1e-12
    with pytest.raises(ValueError, match="two coarse"):
        loss_coarse_global(p, 0, 0, fine, coarse[:1], cfg, sim)


# ---------------------------------------------------------------------------
# Batched loss


def mixed_batch(rng, d=6, n_fine=5):
    passages = rng.standard_normal((3, d))
    fine = rng.standard_normal((n_fine, d))
    coarse = rng.standard_normal((2, d))
    items = [
        BatchItem(row=0, candidates=(0, 1), negatives=(3, 4), assigned=1),
        BatchItem(row=1, candidates=(2, 3, 4), negatives=(0, 1, 0)),
        BatchItem(row=2, candidates=(0, 2), assigned=0, coarse_pos=0, coarse_neg=1),
    ]
    return Batch(passages=passages, fine_prototypes=fine, items=items, coarse_prototypes=coarse)


@pytest.mark.parametrize("metric", ["csls", "cosine", "manhattan", "euclidean"])
def test_batch_parts_match_per_item_losses(metric):
    rng = np.random.default_rng(10)
    batch = mixed_batch(rng)
    cfg = LossConfig()
    sim = SimilarityConfig(metric=metric, knn_k=3)
    state = init_model(d_base=6, seed=3)

    total, parts, _ = loss_and_gradients(state, batch, cfg, sim)

    Yp = project(state, batch.passages)
    Yf = project(state, batch.fine_prototypes)
    Yc = project(state, batch.coarse_prototypes)
    want_global = sum(
        loss_global(Yp[it.row], it.candidates, it.negatives, Yf, cfg, sim)
        for it in batch.items
        if it.negatives
    )
    want_local = sum(
        loss_local(Yp[it.row], it.assigned, it.candidates, Yf, cfg, sim)
        for it in batch.items
        if it.assigned is not None and len(it.candidates) >= 2
    )
    want_coarse = sum(
        loss_coarse_global(Yp[it.row], it.coarse_pos, it.coarse_neg, Yf, Yc, cfg, sim)
        for it in batch.items
        if it.coarse_pos is not None
    )
    assert abs(parts["global"] - want_global) < 1e-12
    assert abs(parts["local"] - want_local) < 1e-12
    assert abs(parts["coarse_global"] - want_coarse) < 1e-12
    assert abs(total - (want_global + want_local + want_coarse) / len(batch.items)) < 1e-12


def test_correction_cancels_between_metrics_on_identical_batches():
    # every loss term is a difference of two corrected scores of the same
    # passage, so the per-passage correction drops out: the corrected and
    # plain-cosine metrics must produce the same loss and the same gradients
    rng = np.random.default_rng(11)
    state = init_model(d_base=6, seed=4)
    cfg = LossConfig()
    for trial in range(10):
        batch = mixed_batch(np.random.default_rng(100 + trial))
        loss_csls, parts_csls, grads_csls = loss_and_gradients(
            state, batch, cfg, SimilarityConfig(metric="csls", knn_k=3)
        )
        loss_cos, parts_cos, grads_cos = loss_and_gradients(
            state, batch, cfg, SimilarityConfig(metric="cosine")
        )
        assert abs(loss_csls - loss_cos) < 1e-12
        for key in parts_csls:
            assert abs(parts_csls[key] - parts_cos[key]) < 1e-12
        for name in PARAMS:
            assert np.allclose(grads_csls[name], grads_cos[name], atol=1e-12)


def test_satisfied_margins_give_exactly_zero_gradients():
    # passage rows coincide with their positive prototype, negatives are
    # near-orthogonal: every hinge argument is well below zero
    d = 4
    fine = np.eye(d)
    passages = np.stack([fine[0], 1.1 * fine[0]])
    items = [
        BatchItem(row=0, candidates=(0,), negatives=(1,)),
        BatchItem(row=1, candidates=(0, 1), assigned=0),
    ]
    batch = Batch(passages=passages, fine_prototypes=fine, items=items)
    state = init_model(d_base=d, seed=5)
    for metric in ("csls", "cosine"):
        total, parts, grads = loss_and_gradients(
            state, batch, LossConfig(), SimilarityConfig(metric=metric, knn_k=2)
        )
        assert total == 0.0
        assert all(v == 0.0 for v in parts.values())
        for name in PARAMS:
            assert np.all(grads[name] == 0.0)


def test_batch_loss_is_deterministic():
    rng = np.random.default_rng(12)
    batch = mixed_batch(rng)
    state = init_model(d_base=6, seed=6)
    args = (state, batch, LossConfig(), SimilarityConfig())
    t1, p1, g1 = loss_and_gradients(*args)
    t2, p2, g2 = loss_and_gradients(*args)
    assert t1 == t2 and p1 == p2
    assert all(np.array_equal(g1[k], g2[k]) for k in PARAMS)


def test_batch_validation_errors():
    rng = np.random.default_rng(13)
    state = init_model(d_base=4, seed=0)
    fine = rng.standard_normal((3, 4))
    passages = rng.standard_normal((1, 4))
    cfg = LossConfig()
    with pytest.raises(ValueError, match="empty batch"):
        loss_and_gradients(state, Batch(passages, fine, []), cfg, SimilarityConfig())
    bad_pairing = Batch(passages, fine, [BatchItem(row=0, candidates=(0, 1), negatives=(2,))])
    with pytest.raises(ValueError, match="pair up"):
        loss_and_gradients(state, bad_pairing, cfg, SimilarityConfig(knn_k=2))
    needs_coarse = Batch(passages, fine, [BatchItem(row=0, coarse_pos=0, coarse_neg=1)])
    with pytest.raises(ValueError, match="coarse prototypes"):
        loss_and_gradients(state, needs_coarse, cfg, SimilarityConfig(knn_k=2))
    half_coarse = Batch(
        passages,
        fine,
        [BatchItem(row=0, coarse_pos=0)],
        coarse_prototypes=rng.standard_normal((2, 4)),
    )
    with pytest.raises(ValueError, match="coarse negative"):
        loss_and_gradients(state, half_coarse, cfg, SimilarityConfig(knn_k=2))
    small = Batch(passages, fine, [BatchItem(row=0, candidates=(0,), negatives=(1,))])
    with pytest.raises(ValueError, match="knn_k"):
        loss_and_gradients(state, small, cfg, SimilarityConfig(knn_k=5))


def test_compute_grads_false_skips_the_backward_pass():
    rng = np.random.default_rng(14)
    batch = mixed_batch(rng)
    state = init_model(d_base=6, seed=7)
    total, parts, grads = loss_and_gradients(
        state, batch, LossConfig(), SimilarityConfig(), compute_grads=False
    )
    assert grads is None
    full_total, full_parts, _ = loss_and_gradients(state, batch, LossConfig(), SimilarityConfig())
    assert total == full_total and parts == full_parts


# ---------------------------------------------------------------------------
# Gradient checks


def reference_scores(Yp, Yt, metric):
    if metric in ("csls", "cosine"):
        return Yp @ Yt.T
    diff = Yp[:, None, :] - Yt[None, :, :]
    if metric == "manhattan":
        return -np.abs(diff).sum(axis=-1)
    return -np.sqrt((diff**2).sum(axis=-1))


def smoothness_margin(state, batch, cfg, sim):
    """Distance from the nearest non-differentiable boundary.

    Recomputes the decision structure independently of the production code:
    hinge arguments, the local-loss argmax gap, the top-K membership gap of
    the correction, and the coordinate/distance kinks of the L1/L2 metrics.
    """
    Yp = project(state, batch.passages)
    Yf = project(state, batch.fine_prototypes)
    S = reference_scores(Yp, Yf, sim.metric)
    gaps = []
    if sim.metric != "cosine":
        k = sim.knn_k
        corr = []
        for row in S:
            ordered = sorted(row)
            if len(row) > k:
                gaps.append(ordered[-k] - ordered[-k - 1])
            corr.append(sum(ordered[-k:]) / k)
        C = S - np.asarray(corr)[:, None]
    else:
        C = S
    Cc = None
    if batch.coarse_prototypes is not None:
        Yc = project(state, batch.coarse_prototypes)
        Sc = reference_scores(Yp, Yc, sim.metric)
        Cc = Sc - np.asarray(corr)[:, None] if sim.metric != "cosine" else Sc

    def hinge_arg(pos, neg):
        if cfg.literal_hinge_sign:
            return pos - neg + cfg.margin_global
        return neg - pos + cfg.margin_global

    for it in batch.items:
        r = it.row
        for pos, neg in zip(it.candidates, it.negatives):
            gaps.append(abs(hinge_arg(C[r, pos], C[r, neg])))
        if it.assigned is not None and len(it.candidates) >= 2:
            others = sorted((C[r, f] for f in it.candidates if f != it.assigned), reverse=True)
            if len(others) >= 2:
                gaps.append(others[0] - others[1])
            gaps.append(abs(others[0] - C[r, it.assigned] + cfg.margin_local))
        if it.coarse_pos is not None:
            gaps.append(abs(hinge_arg(Cc[r, it.coarse_pos], Cc[r, it.coarse_neg])))
    if sim.metric == "manhattan":
        diff = np.abs(Yp[:, None, :] - Yf[None, :, :])
        gaps.append(float(diff.min()))
    if sim.metric == "euclidean":
        dist = np.linalg.norm(Yp[:, None, :] - Yf[None, :, :], axis=-1)
        gaps.append(float(dist.min()))
    return min(gaps) if gaps else np.inf


def shifted(state, name, delta):
    out = copy.deepcopy(state)
    out.params[name] = out.params[name] + delta
    return out


def loss_only(state, batch, cfg, sim):
    total, _, _ = loss_and_gradients(state, batch, cfg, sim, compute_grads=False)
    return total


def directional_fd(state, batch, cfg, sim, rng, h=1e-4):
    """Relative error between v . grad and the central difference along v."""
    _, _, grads = loss_and_gradients(state, batch, cfg, sim)
    direction = {k: rng.standard_normal(v.shape) for k, v in state.params.items()}
    analytic = sum(float((grads[k] * direction[k]).sum()) for k in PARAMS)
    plus = copy.deepcopy(state)
    minus = copy.deepcopy(state)
    for k in PARAMS:
        plus.params[k] = state.params[k] + h * direction[k]
        minus.params[k] = state.params[k] - h * direction[k]
    fd = (loss_only(plus, batch, cfg, sim) - loss_only(minus, batch, cfg, sim)) / (2 * h)
    return abs(fd - analytic) / max(abs(fd), abs(analytic), 1e-8)


def sample_batch(rng, component, d, n_fine):
    passages = rng.standard_normal((2, d))
    fine = rng.standard_normal((n_fine, d))
    coarse = rng.standard_normal((2, d))
    items = []
    for row in range(2):
        cands = tuple(sorted(rng.choice(n_fine, size=3, replace=False).tolist()))
        pool = [f for f in range(n_fine) if f not in cands]
        item = BatchItem(row=row)
        if component in ("global", "mixed"):
            item.candidates = cands
            item.negatives = tuple(int(x) for x in rng.choice(pool, size=len(cands)))
        if component in ("local", "mixed"):
            item.candidates = cands
            item.assigned = int(rng.choice(cands))
        if component in ("coarse", "mixed"):
            item.coarse_pos = int(rng.integers(0, 2))
            item.coarse_neg = 1 - item.coarse_pos
        items.append(item)
    use_coarse = component in ("coarse", "mixed")
    return Batch(passages, fine, items, coarse_prototypes=coarse if use_coarse else None)


def smooth_active_instance(rng, component, metric, min_margin=5e-3):
    """Random instance away from kinks and with at least one active hinge."""
    cfg = LossConfig()
    sim = SimilarityConfig(metric=metric, knn_k=3)
    for _ in range(200):
        d = int(rng.integers(4, 10))
        state = init_model(d_base=d, seed=int(rng.integers(1 << 31)))
        batch = sample_batch(rng, component, d, n_fine=int(rng.integers(4, 8)))
        if smoothness_margin(state, batch, cfg, sim) < min_margin:
            continue
        if loss_only(state, batch, cfg, sim) <= 0.0:
            continue
        return state, batch, cfg, sim
    raise AssertionError("could not sample a smooth active instance")


GRADCHECK_METRICS = ("csls", "cosine", "manhattan", "euclidean")
GRADCHECK_COMPONENTS = ("global", "local", "coarse", "mixed")


@pytest.mark.parametrize("metric", GRADCHECK_METRICS)
@pytest.mark.parametrize("component", GRADCHECK_COMPONENTS)
def test_gradients_match_finite_differences(metric, component):
    seed = 10 * GRADCHECK_METRICS.index(metric) + GRADCHECK_COMPONENTS.index(component)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(5):
        state, batch, cfg, sim = smooth_active_instance(rng, component, metric)
        worst = max(worst, directional_fd(state, batch, cfg, sim, rng))
    assert worst < 1e-4, f"finite-difference mismatch: rel err {worst:.2e}"


def test_gradients_match_finite_differences_per_entry():
    # exhaustive per-coordinate check on one small instance per metric
    h = 1e-4
    for metric in ("csls", "cosine"):
        rng = np.random.default_rng(99 if metric == "csls" else 100)
        state, batch, cfg, sim = smooth_active_instance(rng, "mixed", metric)
        _, _, grads = loss_and_gradients(state, batch, cfg, sim)
        for name in PARAMS:
            param = state.params[name]
            for idx in np.ndindex(param.shape):
                delta = np.zeros_like(param)
                delta[idx] = h
                fd = (
                    loss_only(shifted(state, name, delta), batch, cfg, sim)
                    - loss_only(shifted(state, name, -delta), batch, cfg, sim)
                ) / (2 * h)
                an = grads[name][idx]
                rel = abs(fd - an) / max(abs(fd), abs(an), 1e-6)
                assert rel < 1e-4, f"{name}{idx}: analytic {an:.3e} vs fd {fd:.3e}"


def test_literal_hinge_sign_gradients_match_finite_differences():
    rng = np.random.default_rng(15)
    cfg = LossConfig(literal_hinge_sign=True)
    sim = SimilarityConfig(metric="csls", knn_k=3)
    checked = 0
    for _ in range(200):
        d = int(rng.integers(4, 8))
        state = init_model(d_base=d, seed=int(rng.integers(1 << 31)))
        batch = sample_batch(rng, "mixed", d, n_fine=5)
        if smoothness_margin(state, batch, cfg, sim) < 5e-3:
            continue
        if loss_only(state, batch, cfg, sim) <= 0.0:
            continue
        assert directional_fd(state, batch, cfg, sim, rng) < 1e-4
        checked += 1
        if checked == 5:
            break
    assert checked == 5


# ---------------------------------------------------------------------------
# Optimizer


def tiny_state():
    params = {
        "W1": np.array([[1.0, 0.2], [0.1, 0.9]]),
        "b1": np.array([0.0, 0.1]),
        "W2": np.array([[0.8, 0.0], [0.0, 1.1]]),
        "b2": np.array([0.05, -0.02]),
    }
    zeros = {k: np.zeros_like(v) for k, v in params.items()}
    return ModelState(
        params=params,
        moment1={k: v.copy() for k, v in zeros.items()},
        moment2={k: v.copy() for k, v in zeros.items()},
        step=0,
        seed=0,
    )


def test_optimizer_step_matches_reference_adamw_over_three_steps():
    # reference: straight transcription of Adam with decoupled weight decay
    rng = np.random.default_rng(16)
    state = tiny_state()
    cfg = LossConfig(learning_rate=0.01, weight_decay=0.02)
    b1, b2, eps = 0.9, 0.999, 1e-8
    ref_p = {k: v.copy() for k, v in state.params.items()}
    ref_m = {k: np.zeros_like(v) for k, v in ref_p.items()}
    ref_v = {k: np.zeros_like(v) for k, v in ref_p.items()}
    for t in range(1, 4):
        grads = {k: rng.standard_normal(v.shape) for k, v in ref_p.items()}
        optimizer_step(state, grads, cfg)
        for k in ref_p:
            ref_m[k] = b1 * ref_m[k] + (1 - b1) * grads[k]
            ref_v[k] = b2 * ref_v[k] + (1 - b2) * grads[k] ** 2
            m_hat = ref_m[k] / (1 - b1**t)
            v_hat = ref_v[k] / (1 - b2**t)
            ref_p[k] = ref_p[k] - cfg.learning_rate * (
                m_hat / (np.sqrt(v_hat) + eps) + cfg.weight_decay * ref_p[k]
            )
        assert state.step == t
        for k in ref_p:
            assert np.allclose(state.params[k], ref_p[k], atol=1e-12), (t, k)


def test_weight_decay_is_decoupled_from_the_gradient():
    state = tiny_state()
    cfg = LossConfig(learning_rate=0.1, weight_decay=0.5)
    before = {k: v.copy() for k, v in state.params.items()}
    zero_grads = {k: np.zeros_like(v) for k, v in state.params.items()}
    optimizer_step(state, zero_grads, cfg)
    for k, p in state.params.items():
        assert np.allclose(p, before[k] * (1.0 - 0.1 * 0.5), atol=1e-15)


def test_optimizer_rejects_non_finite_parameters():
    state = tiny_state()
    grads = {k: np.full_like(v, np.inf) for k, v in state.params.items()}
    with np.errstate(invalid="ignore"):  # the inf/inf is the point
        with pytest.raises(TrainingError, match="non-finite"):
            optimizer_step(state, grads, LossConfig(learning_rate=0.01))


def test_training_reduces_the_loss_on_a_fixed_problem():
    rng = np.random.default_rng(17)
    d = 8
    fine = np.eye(d)[:4]
    passages = rng.standard_normal((8, d))
    items = [
        BatchItem(
            row=i,
            candidates=(0, 1) if i % 2 == 0 else (2, 3),
            negatives=(2, 3) if i % 2 == 0 else (0, 1),
            assigned=i % 2,
        )
        for i in range(8)
    ]
    batch = Batch(passages=passages, fine_prototypes=fine, items=items)
    state = init_model(d_base=d, seed=8)
    cfg = LossConfig(learning_rate=5e-3)
    sim = SimilarityConfig(metric="csls", knn_k=3)
    initial, _, _ = loss_and_gradients(state, batch, cfg, sim, compute_grads=False)
    assert initial > 0.0
    for _ in range(60):
        _, _, grads = loss_and_gradients(state, batch, cfg, sim)
        optimizer_step(state, grads, cfg)
    final, _, _ = loss_and_gradients(state, batch, cfg, sim, compute_grads=False)
    assert final < 0.35 * initial


# ---------------------------------------------------------------------------
# Checkpoints


def test_checkpoint_round_trip(tmp_path):
    state = init_model(d_base=5, d_proj=4, seed=9)
    rng = np.random.default_rng(18)
    for k in PARAMS:
        state.moment1[k] = rng.standard_normal(state.params[k].shape)
        state.moment2[k] = rng.random(state.params[k].shape)
    state.step = 42
    path = tmp_path / "model.c2fm"
    save_checkpoint(path, state)
    loaded = load_checkpoint(path)
    assert loaded.step == 42 and loaded.seed == 9
    for k in PARAMS:
        # storage is float32: exact to one float32 rounding
        assert np.allclose(loaded.params[k], state.params[k], atol=1e-6)
        assert np.allclose(loaded.moment1[k], state.moment1[k], atol=1e-6)
        assert np.allclose(loaded.moment2[k], state.moment2[k], atol=1e-6)
        assert loaded.params[k].dtype == np.float64  # training dtype restored


def test_checkpoint_rejects_malformed_files(tmp_path):
    path = tmp_path / "model.c2fm"
    path.write_bytes(b"shrt")
    with pytest.raises(ValueError, match="too short"):
        load_checkpoint(path)

    header = struct.Struct("<4sIIqI")
    path.write_bytes(header.pack(b"XXXX", 1, 0, 0, 0))
    with pytest.raises(ValueError, match="bad checkpoint magic"):
        load_checkpoint(path)

    path.write_bytes(header.pack(b"C2FM", 9, 0, 0, 0))
    with pytest.raises(ValueError, match="version 9"):
        load_checkpoint(path)

    path.write_bytes(header.pack(b"C2FM", 1, 0, 0, 0))  # zero tensors
    with pytest.raises(ValueError, match="missing tensors"):
        load_checkpoint(path)
