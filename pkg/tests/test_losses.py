"""Loss tests against independent scalar (loop-based) oracles plus the
analytically forced values."""

import numpy as np
import pytest

from visemeflow import losses
from visemeflow.losses import JointWeights, PretrainWeights


# ---------------------------------------------------------------------------
# scalar oracles: explicit loops, no vectorization, no code reuse


def oracle_central_diff(seq):
    t_n = len(seq)
    out = [np.zeros_like(np.asarray(seq[0], dtype=float)) for _ in range(t_n)]
    if t_n < 2:
        return out
    for t in range(t_n):
        if t == 0:
            out[t] = np.asarray(seq[1], float) - np.asarray(seq[0], float)
        elif t == t_n - 1:
            out[t] = np.asarray(seq[-1], float) - np.asarray(seq[-2], float)
        else:
            out[t] = (np.asarray(seq[t + 1], float) - np.asarray(seq[t - 1], float)) / 2.0
    return out


def oracle_ce(probs_list, labels_list):
    total = 0.0
    for probs, labels in zip(probs_list, labels_list):
        clip_sum = 0.0
        for t in range(len(labels)):
            clip_sum += -np.log(max(probs[t][labels[t]], 1e-7))
        total += clip_sum / len(labels)
    return total / len(probs_list)


def oracle_l1(q_list, qh_list, per_dim=True):
    total = 0.0
    for q, qh in zip(q_list, qh_list):
        t_n, m = q.shape
        clip_sum = 0.0
        for t in range(t_n):
            for d in range(m):
                clip_sum += abs(q[t, d] - qh[t, d])
        denom = t_n * m if per_dim else t_n
        total += clip_sum / denom
    return total / len(q_list)


def oracle_smooth(q_list, per_dim=True):
    total = 0.0
    for q in q_list:
        dq = oracle_central_diff(list(q))
        t_n, m = q.shape
        clip_sum = 0.0
        for t in range(t_n):
            for d in range(m):
                clip_sum += abs(dq[t][d])
        denom = t_n * m if per_dim else t_n
        total += clip_sum / denom
    return total / len(q_list)


def oracle_bce(p_list, m_list):
    total = 0.0
    for p, m in zip(p_list, m_list):
        t_n, a_n = p.shape
        clip_total = 0.0
        for a in range(a_n):
            on = 0.0
            off = 0.0
            for t in range(t_n):
                if m[t, a]:
                    on += np.log(max(p[t, a], 1e-7))
                else:
                    off += np.log(max(1.0 - p[t, a], 1e-7))
            clip_total += -(on / t_n + off / t_n)
        total += clip_total / a_n
    return total / len(p_list)


def oracle_masked_l1(v_list, vh_list, m_list):
    total = 0.0
    for v, vh, m in zip(v_list, vh_list, m_list):
        t_n, a_n = v.shape
        per_param = []
        for a in range(a_n):
            count = sum(1 for t in range(t_n) if m[t, a])
            if count == 0:
                continue
            err = sum(abs(v[t, a] - vh[t, a]) for t in range(t_n) if m[t, a])
            per_param.append(err / count)
        total += sum(per_param) / len(per_param) if per_param else 0.0
    return total / len(v_list)


def oracle_masked_smooth(v_list, m_list):
    total = 0.0
    for v, m in zip(v_list, m_list):
        t_n, a_n = v.shape
        per_param = []
        for a in range(a_n):
            entries = []
            for t in range(1, t_n - 1):
                if m[t - 1, a] and m[t, a] and m[t + 1, a]:
                    entries.append(abs((v[t + 1, a] - v[t - 1, a]) / 2.0))
            if entries:
                per_param.append(sum(entries) / len(entries))
        total += sum(per_param) / len(per_param) if per_param else 0.0
    return total / len(v_list)


def random_toy(rng, n_clips=3, max_t=6, a=29):
    lengths = [int(rng.integers(3, max_t + 1)) for _ in range(n_clips)]
    probs = [rng.dirichlet(np.ones(20), size=t) for t in lengths]
    labels = [rng.integers(0, 20, t) for t in lengths]
    q = [rng.normal(size=(t, 76)) for t in lengths]
    qh = [rng.normal(size=(t, 76)) for t in lengths]
    p = [rng.uniform(0.01, 0.99, size=(t, a)) for t in lengths]
    m = [rng.random((t, a)) > 0.4 for t in lengths]
    v = [rng.uniform(0, 1, size=(t, a)) for t in lengths]
    vh = [rng.uniform(0, 1, size=(t, a)) for t in lengths]
    y = [rng.uniform(0, 1, size=(t, 2)) for t in lengths]
    yh = [rng.uniform(0, 1, size=(t, 2)) for t in lengths]
    return probs, labels, q, qh, p, m, v, vh, y, yh


class TestPhonemeCrossEntropy:
    def test_perfect_one_hot_is_zero(self):
        probs = np.zeros((4, 20))
        labels = np.array([3, 7, 0, 19])
        probs[np.arange(4), labels] = 1.0
        assert losses.phoneme_ce_loss([probs], [labels]) == 0.0

    def test_uniform_prediction_is_ln20(self):
        probs = np.full((10, 20), 1.0 / 20.0)
        labels = np.arange(10) % 20
        assert abs(losses.phoneme_ce_loss([probs], [labels]) - np.log(20)) < 1e-9

    def test_two_clips_different_lengths_match_two_level_average(self):
        rng = np.random.default_rng(0)
        probs = [rng.dirichlet(np.ones(20), size=3), rng.dirichlet(np.ones(20), size=6)]
        labels = [rng.integers(0, 20, 3), rng.integers(0, 20, 6)]
        assert abs(
            losses.phoneme_ce_loss(probs, labels) - oracle_ce(probs, labels)
        ) < 1e-12

    def test_label_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            losses.phoneme_ce_loss([np.full((2, 20), 0.05)], [np.array([0, 20])])
        with pytest.raises(ValueError):
            losses.phoneme_ce_loss([np.full((2, 20), 0.05)], [np.array([-1, 3])])


class TestLandmarkLosses:
    def test_equal_inputs_zero(self):
        q = np.random.default_rng(1).normal(size=(5, 76))
        assert losses.landmark_l1_loss([q], [q.copy()]) == 0.0

    def test_constant_offset_normalization(self):
        q = np.zeros((7, 76))
        assert abs(losses.landmark_l1_loss([q + 0.1], [q]) - 0.1) < 1e-12

    def test_random_matches_scalar_oracle(self):
        rng = np.random.default_rng(2)
        q = [rng.normal(size=(4, 76)), rng.normal(size=(6, 76))]
        qh = [rng.normal(size=(4, 76)), rng.normal(size=(6, 76))]
        assert abs(losses.landmark_l1_loss(q, qh) - oracle_l1(q, qh)) < 1e-12

    def test_smoothness_constant_is_zero(self):
        q = np.ones((6, 76)) * 0.4
        assert losses.landmark_smoothness_loss([q]) == 0.0

    def test_smoothness_linear_slope(self):
        k = 2.0
        q = k * np.arange(8)[:, None] * np.ones((1, 76))
        assert abs(losses.landmark_smoothness_loss([q]) - k) < 1e-12

    def test_smoothness_random_matches_oracle(self):
        rng = np.random.default_rng(3)
        q = [rng.normal(size=(5, 76)), rng.normal(size=(3, 76))]
        assert abs(losses.landmark_smoothness_loss(q) - oracle_smooth(q)) < 1e-12


class TestCentralDifference:
    def test_constant_sequence_is_zero(self):
        assert np.array_equal(
            losses.central_difference(np.ones((5, 3))), np.zeros((5, 3))
        )

    def test_linear_sequence_interior_slope(self):
        seq = 2.0 * np.arange(6)[:, None] * np.ones((1, 2))
        d = losses.central_difference(seq)
        assert np.allclose(d, 2.0)

    def test_sine_refinement_second_order(self):
        # halving the step shrinks the interior error by about 4x
        errs = []
        for n in (40, 80):
            t = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
            h = t[1] - t[0]
            d = losses.central_difference(np.sin(t)[:, None])[:, 0] / h
            errs.append(np.abs(d[1:-1] - np.cos(t[1:-1])).max())
        ratio = errs[0] / errs[1]
        assert 3.0 < ratio < 5.0

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(4)
        seq = rng.normal(size=(7, 4))
        ref = np.stack(oracle_central_diff(list(seq)))
        assert np.abs(losses.central_difference(seq) - ref).max() < 1e-15


class TestPretrainCombination:
    def test_perfect_everything_is_zero(self):
        probs = np.zeros((4, 20))
        labels = np.array([1, 2, 3, 4])
        probs[np.arange(4), labels] = 1.0
        q = np.full((4, 76), 0.2)
        w = PretrainWeights()
        assert losses.pretrain_loss([probs], [labels], [q], [q.copy()], w) == 0.0

    def test_weights_one_zero_zero_reduces_to_classification(self):
        rng = np.random.default_rng(5)
        probs = [rng.dirichlet(np.ones(20), size=5)]
        labels = [rng.integers(0, 20, 5)]
        q = [rng.normal(size=(5, 76))]
        qh = [rng.normal(size=(5, 76))]
        w = PretrainWeights(w_c=1.0, w_q=0.0, w_q_prime=0.0)
        assert abs(
            losses.pretrain_loss(probs, labels, q, qh, w)
            - losses.phoneme_ce_loss(probs, labels)
        ) < 1e-15

    def test_random_matches_sum_of_oracles(self):
        rng = np.random.default_rng(6)
        probs = [rng.dirichlet(np.ones(20), size=4)]
        labels = [rng.integers(0, 20, 4)]
        q = [rng.normal(size=(4, 76))]
        qh = [rng.normal(size=(4, 76))]
        w = PretrainWeights()
        expected = (
            w.w_c * oracle_ce(probs, labels)
            + w.w_q * oracle_l1(q, qh)
            + w.w_q_prime * oracle_smooth(q)
        )
        assert abs(losses.pretrain_loss(probs, labels, q, qh, w) - expected) < 1e-12


class TestActivationBce:
    def test_confident_correct_predictions_near_zero(self):
        m = np.random.default_rng(7).random((6, 29)) > 0.5
        p = np.where(m, 1.0, 0.0)
        assert losses.activation_bce_loss([p], [m]) < 1e-5

    def test_half_probability_gives_ln2(self):
        m = np.random.default_rng(8).random((5, 29)) > 0.5
        p = np.full((5, 29), 0.5)
        assert abs(losses.activation_bce_loss([p], [m]) - np.log(2)) < 1e-9

    def test_mixed_toy_matches_scalar_oracle(self):
        p = np.array([[0.9, 0.2], [0.6, 0.7], [0.1, 0.5]])
        m = np.array([[True, False], [False, True], [True, True]])
        assert abs(
            losses.activation_bce_loss([p], [m]) - oracle_bce([p], [m])
        ) < 1e-12


class TestMaskedRigLosses:
    def test_exact_on_active_frames_zero(self):
        rng = np.random.default_rng(9)
        v = rng.uniform(0, 1, (6, 29))
        m = rng.random((6, 29)) > 0.5
        vh = np.where(m, v, rng.uniform(0, 1, (6, 29)))
        assert losses.masked_rig_l1_loss([v], [vh], [m]) == 0.0

    def test_constant_error_on_active_frames(self):
        rng = np.random.default_rng(10)
        m = rng.random((8, 29)) > 0.3
        vh = rng.uniform(0.3, 0.7, (8, 29))
        v = vh + 0.2
        assert abs(losses.masked_rig_l1_loss([v], [vh], [m]) - 0.2) < 1e-12

    def test_empty_mask_contributes_zero(self):
        v = np.random.default_rng(11).uniform(0, 1, (5, 29))
        m = np.zeros((5, 29), bool)
        assert losses.masked_rig_l1_loss([v], [v + 0.5], [m]) == 0.0

    def test_inactive_frames_do_not_change_loss(self):
        rng = np.random.default_rng(12)
        v = rng.uniform(0, 1, (6, 29))
        vh = rng.uniform(0, 1, (6, 29))
        m = rng.random((6, 29)) > 0.4
        base = losses.masked_rig_l1_loss([v], [vh], [m])
        v2 = np.concatenate([v, rng.uniform(0, 1, (4, 29))])
        vh2 = np.concatenate([vh, rng.uniform(0, 1, (4, 29))])
        m2 = np.concatenate([m, np.zeros((4, 29), bool)])
        assert abs(losses.masked_rig_l1_loss([v2], [vh2], [m2]) - base) < 1e-12

    def test_smoothness_constant_within_runs_is_zero(self):
        v = np.full((10, 29), 0.6)
        m = np.random.default_rng(13).random((10, 29)) > 0.3
        assert losses.rig_smoothness_loss([v], [m]) == 0.0

    def test_smoothness_single_frame_runs_have_no_interior(self):
        v = np.random.default_rng(14).uniform(0, 1, (6, 29))
        m = np.zeros((6, 29), bool)
        m[::2] = True  # alternating single-frame runs
        assert losses.rig_smoothness_loss([v], [m]) == 0.0

    def test_smoothness_ramp_within_five_frame_run(self):
        v = np.zeros((7, 1))
        v[1:6, 0] = np.linspace(0.1, 0.5, 5)  # slope 0.1/frame inside the run
        m = np.zeros((7, 1), bool)
        m[1:6, 0] = True
        # stencil-complete frames: 2, 3, 4 -> |central diff| = 0.1 each
        assert abs(losses.rig_smoothness_loss([v], [m]) - 0.1) < 1e-12
        assert abs(oracle_masked_smooth([v], [m]) - 0.1) < 1e-12


class TestStyleFieldLosses:
    def test_equal_is_zero(self):
        y = np.random.default_rng(15).uniform(0, 1, (5, 2))
        assert losses.jali_l1_loss([y], [y.copy()]) == 0.0

    def test_constant_track_smoothness_zero(self):
        y = np.full((6, 2), 0.4)
        assert losses.jali_smoothness_loss([y]) == 0.0

    def test_random_matches_scalar_oracles(self):
        rng = np.random.default_rng(16)
        y = [rng.uniform(0, 1, (5, 2)), rng.uniform(0, 1, (3, 2))]
        yh = [rng.uniform(0, 1, (5, 2)), rng.uniform(0, 1, (3, 2))]
        assert abs(losses.jali_l1_loss(y, yh) - oracle_l1(y, yh, per_dim=False)) < 1e-12
        assert abs(losses.jali_smoothness_loss(y) - oracle_smooth(y, per_dim=False)) < 1e-12


class TestJointObjective:
    def test_all_perfect_is_zero(self):
        labels = np.array([0, 5, 9, 12])
        probs = np.zeros((4, 20))
        probs[np.arange(4), labels] = 1.0
        q = np.full((4, 76), 0.1)
        m = np.random.default_rng(17).random((4, 29)) > 0.5
        v = np.full((4, 29), 0.3)
        y = np.full((4, 2), 0.7)
        total = losses.joint_loss(
            [probs], [labels], [q], [q.copy()],
            [np.where(m, 1.0, 0.0)], [m], [v], [v.copy()], [y], [y.copy()],
            PretrainWeights(), JointWeights(),
        )
        assert total < 1e-5

    def test_zero_joint_weights_reduce_to_pretrain(self):
        rng = np.random.default_rng(18)
        probs, labels, q, qh, p, m, v, vh, y, yh = random_toy(rng)
        w1 = PretrainWeights()
        w2 = JointWeights(0.0, 0.0, 0.0, 0.0, 0.0)
        joint = losses.joint_loss(probs, labels, q, qh, p, m, v, vh, y, yh, w1, w2)
        pre = losses.pretrain_loss(probs, labels, q, qh, w1)
        assert abs(joint - pre) < 1e-12

    def test_random_toy_matches_sum_of_term_oracles(self):
        rng = np.random.default_rng(19)
        probs, labels, q, qh, p, m, v, vh, y, yh = random_toy(rng)
        w1, w2 = PretrainWeights(), JointWeights()
        expected = (
            w1.w_c * oracle_ce(probs, labels)
            + w1.w_q * oracle_l1(q, qh)
            + w1.w_q_prime * oracle_smooth(q)
            + w2.w_a * oracle_bce(p, m)
            + w2.w_v * oracle_masked_l1(v, vh, m)
            + w2.w_j * oracle_l1(y, yh, per_dim=False)
            + w2.w_v_prime * oracle_masked_smooth(v, m)
            + w2.w_j_prime * oracle_smooth(y, per_dim=False)
        )
        got = losses.joint_loss(probs, labels, q, qh, p, m, v, vh, y, yh, w1, w2)
        assert abs(got - expected) < 1e-10

    def test_default_weights(self):
        w1 = PretrainWeights()
        assert (w1.w_c, w1.w_q, w1.w_q_prime) == (0.75, 0.25, 0.1)
        w2 = JointWeights()
        assert (w2.w_a, w2.w_v, w2.w_j, w2.w_v_prime, w2.w_j_prime) == (
            0.1, 0.2, 0.2, 0.15, 0.15,
        )

    def test_negative_weights_rejected(self):
        with pytest.raises(ValueError):
            PretrainWeights(w_c=-0.1)
        with pytest.raises(ValueError):
            JointWeights(w_a=-1.0)


class TestOracleAgreementSweep:
    def test_all_losses_match_scalar_oracles_on_random_toys(self):
        rng = np.random.default_rng(20)
        for _ in range(25):
            n = int(rng.integers(1, 4))
            probs, labels, q, qh, p, m, v, vh, y, yh = random_toy(rng, n_clips=n)
            assert abs(losses.phoneme_ce_loss(probs, labels) - oracle_ce(probs, labels)) < 1e-10
            assert abs(losses.landmark_l1_loss(q, qh) - oracle_l1(q, qh)) < 1e-10
            assert abs(losses.landmark_smoothness_loss(q) - oracle_smooth(q)) < 1e-10
            assert abs(losses.activation_bce_loss(p, m) - oracle_bce(p, m)) < 1e-10
            assert abs(losses.masked_rig_l1_loss(v, vh, m) - oracle_masked_l1(v, vh, m)) < 1e-10
            assert abs(losses.rig_smoothness_loss(v, m) - oracle_masked_smooth(v, m)) < 1e-10
            assert abs(losses.jali_l1_loss(y, yh) - oracle_l1(y, yh, per_dim=False)) < 1e-10
            assert abs(losses.jali_smoothness_loss(y) - oracle_smooth(y, per_dim=False)) < 1e-10

    def test_losses_are_nonnegative(self):
        rng = np.random.default_rng(21)
        for _ in range(10):
            probs, labels, q, qh, p, m, v, vh, y, yh = random_toy(rng)
            for val in (
                losses.phoneme_ce_loss(probs, labels),
                losses.landmark_l1_loss(q, qh),
                losses.landmark_smoothness_loss(q),
                losses.activation_bce_loss(p, m),
                losses.masked_rig_l1_loss(v, vh, m),
                losses.rig_smoothness_loss(v, m),
                losses.jali_l1_loss(y, yh),
                losses.jali_smoothness_loss(y),
            ):
                assert val >= 0.0
