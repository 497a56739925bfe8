import numpy as np
import pytest
from scipy.special import logsumexp

from partforge import hcr, rng
from partforge.hcr import (ConfigurationError, HcrConfig, MomentumQueue,
                           info_nce, momentum_update, queue_push)
from partforge.tensor import ShapeError, Tensor


def _unit_rows(x):
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _oracle_info_nce(q, k, tau, positives):
    """Plain numpy reference: mean over rows of mean over positives of
    -log softmax, computed via logsumexp without the shift trick."""
    qn, kn = _unit_rows(q), _unit_rows(k)
    logits = qn @ kn.T / tau
    total = 0.0
    for i, pos in enumerate(positives):
        lse = logsumexp(logits[i])
        total += np.mean([lse - logits[i, j] for j in np.atleast_1d(pos)])
    return total / len(positives)


# -- queue ------------------------------------------------------------------

def test_queue_fifo_matches_list_oracle():
    cap = 64
    q = MomentumQueue(cap, 4, "shape")
    oracle_rows, oracle_labels = [], []
    rs = rng.stream(0, "queue")
    for push in range(1000):
        b = int(rs.integers(1, 9))
        feats = rs.standard_normal((b, 4))
        labels = rs.integers(0, 8, size=b)
        queue_push(q, feats, labels)
        oracle_rows.extend(feats)
        oracle_labels.extend(labels)
        oracle_rows = oracle_rows[-cap:]
        oracle_labels = oracle_labels[-cap:]
        rows, labs = q.contents()
        assert np.array_equal(rows, np.array(oracle_rows))
        assert np.array_equal(labs, np.array(oracle_labels))


def test_queue_push_larger_than_capacity_raises():
    q = MomentumQueue(4, 2, "shape")
    with pytest.raises(ValueError):
        queue_push(q, np.zeros((5, 2)))


def test_queue_unfilled_returns_partial():
    q = MomentumQueue(8, 2, "shape")
    queue_push(q, np.ones((3, 2)), np.array([1, 2, 3]))
    rows, labs = q.contents()
    assert rows.shape == (3, 2)
    assert labs.tolist() == [1, 2, 3]


# -- momentum update --------------------------------------------------------

def test_momentum_update_closed_form():
    m = 0.99
    rs = rng.stream(1, "ema")
    theta0 = rs.standard_normal((3, 5))
    target = rs.standard_normal((3, 5))
    theta = {"w": theta0.copy()}
    for n in (1, 10, 100):
        theta = {"w": theta0.copy()}
        for _ in range(n):
            momentum_update(theta, {"w": target}, m)
        expect = (m ** n) * theta0 + (1 - m ** n) * target
        assert np.allclose(theta["w"], expect, rtol=0, atol=1e-12)


def test_momentum_update_shape_mismatch():
    with pytest.raises(ShapeError):
        momentum_update({"w": np.zeros((2, 2))}, {"w": np.zeros(3)}, 0.9)


# -- InfoNCE ----------------------------------------------------------------

def test_info_nce_orthonormal_closed_form():
    # two orthonormal queries matched to themselves at tau=1:
    # per-row loss is ln(1 + e^-1)
    q = np.eye(2)
    loss = info_nce(Tensor(q), Tensor(q.copy()), 1.0, [np.array([0]), np.array([1])])
    assert abs(float(loss.data) - np.log(1.0 + np.exp(-1.0))) < 1e-9


def test_info_nce_matches_oracle():
    rs = rng.stream(2, "nce")
    q, k = rs.standard_normal((6, 8)), rs.standard_normal((10, 8))
    positives = [rs.choice(10, size=int(rs.integers(1, 4)), replace=False)
                 for _ in range(6)]
    loss = info_nce(Tensor(q), Tensor(k), 0.5, positives)
    assert abs(float(loss.data) - _oracle_info_nce(q, k, 0.5, positives)) < 1e-12


def test_info_nce_extreme_temperature_finite():
    rs = rng.stream(3, "cold")
    q, k = rs.standard_normal((8, 16)), rs.standard_normal((8, 16))
    loss = info_nce(Tensor(q), Tensor(k), 1e-3, [np.array([i]) for i in range(8)])
    assert np.isfinite(float(loss.data))
    loss.backward()


def test_info_nce_empty_positives_raises():
    with pytest.raises(ConfigurationError):
        info_nce(Tensor(np.eye(2)), Tensor(np.eye(2)), 1.0,
                 [np.array([0]), np.array([], dtype=np.int64)])


def test_info_nce_gradients_flow_to_both_sides():
    rs = rng.stream(4, "grad")
    q = Tensor(rs.standard_normal((4, 6)), requires_grad=True)
    k = Tensor(rs.standard_normal((5, 6)), requires_grad=True)
    loss = info_nce(q, k, 0.2, [np.array([i]) for i in range(4)])
    loss.backward()
    assert q.grad is not None and np.any(q.grad != 0.0)
    assert k.grad is not None and np.any(k.grad != 0.0)


def test_direction_loss_uses_queue_labels_as_positives():
    # a same-label queue row identical to the batch key must be a positive
    rs = rng.stream(5, "dir")
    nb = 2
    q_feats = _unit_rows(rs.standard_normal((nb, 4)))
    batch_keys = _unit_rows(rs.standard_normal((nb, 4)))
    labels = np.array([0, 1])
    queue = MomentumQueue(4, 4, "shape")
    extra = _unit_rows(rs.standard_normal((4, 4)))
    extra_labels = np.array([0, 2, 3, 4])
    queue_push(queue, extra, extra_labels)
    got = hcr._direction_loss(Tensor(q_feats), batch_keys, labels, labels,
                              queue, 0.5)
    keys = np.vstack([batch_keys, extra])
    key_labels = np.concatenate([labels, extra_labels])
    positives = [np.flatnonzero(key_labels == lab) for lab in labels]
    assert len(positives[0]) == 2  # batch key + same-label queue row
    want = _oracle_info_nce(q_feats, keys, 0.5, positives)
    assert abs(float(got.data) - want) < 1e-12


def test_direction_loss_ignores_underfilled_queue():
    rs = rng.stream(6, "uf")
    q_feats = _unit_rows(rs.standard_normal((4, 4)))
    keys = _unit_rows(rs.standard_normal((4, 4)))
    labels = np.arange(4)
    queue = MomentumQueue(16, 4, "shape")
    queue_push(queue, _unit_rows(rs.standard_normal((2, 4))), np.array([0, 1]))
    got = hcr._direction_loss(Tensor(q_feats), keys, labels, labels, queue, 0.5)
    want = _oracle_info_nce(q_feats, keys, 0.5, [np.array([i]) for i in range(4)])
    assert abs(float(got.data) - want) < 1e-12


def test_hcr_loss_weighted_sum():
    rs = rng.stream(7, "comb")
    d = 8

    def feats(n):
        return _unit_rows(rs.standard_normal((n, d)))

    batch = {
        "img_part": Tensor(feats(4)), "shape_part": Tensor(feats(4)),
        "img_part_m": feats(4), "shape_part_m": feats(4),
        "part_labels": np.array([0, 1, 2, 3]),
        "img_obj": Tensor(feats(2)), "shape_obj": Tensor(feats(2)),
        "img_obj_m": feats(2), "shape_obj_m": feats(2),
        "obj_ids": np.array([10, 11]),
    }
    cfg = HcrConfig(lambda_part=0.03, lambda_obj=0.05)
    total, parts = hcr.hcr_loss(batch, {}, cfg)
    want = 0.03 * parts["L_part"] + 0.05 * parts["L_obj"]
    assert abs(float(total.data) - want) < 1e-12


def test_config_rejects_nonpositive_temperature():
    with pytest.raises(ConfigurationError):
        HcrConfig(tau=0.0)
