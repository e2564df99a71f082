import numpy as np
import pytest

from attnalign import tensor as T
from attnalign import training
from attnalign.corpus import EOS_ID, SentencePair
from attnalign.model import ModelDims, forward_teacher_forced, init_params, partition_filter
from attnalign.supervision import HardAlignment, complete_alignment, simple_transform
from attnalign.training import (
    AdaDeltaState,
    Phase,
    TrainConfig,
    adadelta_update,
    parse_schedule,
    run_schedule,
    sentence_loss,
    train_phase,
)


DIMS = ModelDims(src_vocab=8, tgt_vocab=8, embed=4, hidden=4, attn=4, out=4)


def make_params(seed=0):
    return init_params(DIMS, seed=seed, init_scale=0.5)


def tiny_corpus(n=6, seed=0):
    rng = np.random.default_rng(seed)
    pairs, sup = [], []
    for k in range(n):
        length = int(rng.integers(2, 5))
        ids = [int(rng.integers(3, 8)) for _ in range(length)]
        pairs.append(SentencePair(ids + [EOS_ID], ids + [EOS_ID], k))
        links = {(t, t) for t in range(1, length + 1)}
        a = complete_alignment(HardAlignment(length + 1, length + 1, links))
        sup.append(simple_transform(a))
    return pairs, sup


class TestSentenceLoss:
    def trace_and_sup(self):
        pairs, sup = tiny_corpus(1, seed=3)
        trace = forward_teacher_forced(make_params(1), pairs[0])
        return trace, sup[0]

    def test_joint_with_zero_weight_equals_translation(self):
        trace, sup = self.trace_and_sup()
        joint = sentence_loss(trace, sup, training.JOINT, 0.0)
        trans = sentence_loss(trace, None, training.TRANSLATION)
        assert float(joint.data) == float(trans.data)

    def test_alignment_loss_zero_at_perfect_match(self):
        trace, _ = self.trace_and_sup()
        sup = np.asarray(trace.attention.data)
        loss = sentence_loss(trace, sup, training.ALIGNMENT, 1.0)
        assert float(loss.data) == 0.0

    def test_joint_is_sum_of_parts(self):
        trace, sup = self.trace_and_sup()
        joint = float(sentence_loss(trace, sup, training.JOINT, 1.0).data)
        trans = float(sentence_loss(trace, None, training.TRANSLATION).data)
        align = float(sentence_loss(trace, sup, training.ALIGNMENT, 1.0).data)
        assert joint == pytest.approx(trans + align, rel=1e-12)

    def test_missing_supervision_rejected(self):
        trace, _ = self.trace_and_sup()
        with pytest.raises(ValueError, match="supervision"):
            sentence_loss(trace, None, training.ALIGNMENT)
        with pytest.raises(ValueError, match="supervision"):
            sentence_loss(trace, None, training.JOINT, 1.0)


class TestAdaDelta:
    class P:
        def __init__(self, w):
            self.tensors = {"w": np.asarray(w, dtype=np.float64)}

    def test_zero_gradient_leaves_params_and_decays_state(self):
        p = self.P([1.0, 2.0])
        state = AdaDeltaState()
        state.ensure("w", p.tensors["w"])
        state.avg_sq_grad["w"][:] = 0.4
        adadelta_update(p, {"w": np.zeros(2)}, state, ["w"])
        np.testing.assert_array_equal(p.tensors["w"], [1.0, 2.0])
        np.testing.assert_allclose(state.avg_sq_grad["w"], 0.4 * 0.95)

    def test_first_step_magnitude(self):
        # rho=0.95, eps=1e-6, g=1: sqrt(eps)/sqrt(0.05 + eps)
        p = self.P([0.0])
        adadelta_update(p, {"w": np.array([1.0])}, AdaDeltaState(), ["w"])
        expected = -np.sqrt(1e-6) / np.sqrt(0.05 + 1e-6)
        assert p.tensors["w"][0] == pytest.approx(expected, abs=1e-12)
        assert p.tensors["w"][0] == pytest.approx(-4.4719e-3, abs=1e-6)

    def test_scale_equivariance_on_first_step(self):
        deltas = []
        for scale in (1.0, 10.0):
            p = self.P([0.0])
            adadelta_update(p, {"w": np.array([scale])}, AdaDeltaState(), ["w"])
            deltas.append(abs(p.tensors["w"][0]))
        assert deltas[1] / deltas[0] == pytest.approx(1.0, rel=0.01)

    def test_non_finite_gradient_skips_batch(self):
        p = self.P([1.0])
        state = AdaDeltaState()
        ok = adadelta_update(p, {"w": np.array([np.nan])}, state, ["w"])
        assert not ok
        assert state.skipped_batches == 1
        np.testing.assert_array_equal(p.tensors["w"], [1.0])

    def test_quadratic_bowl_convergence(self):
        p = self.P([5.0])
        state = AdaDeltaState()
        for _ in range(2000):
            adadelta_update(p, {"w": 2 * p.tensors["w"]}, state, ["w"])
            if abs(p.tensors["w"][0]) < 0.5:
                break
        assert abs(p.tensors["w"][0]) < 0.5


class TestSchedule:
    def test_shorthand_single_joint(self):
        (phase,) = parse_schedule("J", total_epochs=6)
        assert phase == Phase(training.JOINT, "ALL", 6)

    def test_shorthand_chains(self):
        phases = parse_schedule("A->T->J", total_epochs=9)
        assert [(p.objective, p.trainable, p.epochs) for p in phases] == [
            (training.ALIGNMENT, "A", 3),
            (training.TRANSLATION, "T", 3),
            (training.JOINT, "ALL", 3),
        ]

    def test_explicit_syntax(self):
        phases = parse_schedule("ALIGN:A:2->JOINT:ALL:10")
        assert phases == [Phase(training.ALIGNMENT, "A", 2), Phase(training.JOINT, "ALL", 10)]

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            parse_schedule("")

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(schedule=[])
        with pytest.raises(ValueError):
            TrainConfig(schedule=[Phase("JOINT", "ALL", 1)], rho=1.5)


class TestTrainPhase:
    def test_t_only_phase_freezes_a_tensors(self):
        params = make_params(2)
        pairs, sup = tiny_corpus()
        before = {n: params.tensors[n].copy() for n in params.names()}
        cfg = TrainConfig(schedule=[Phase(training.TRANSLATION, "T", 2)], batch_size=3, seed=0)
        train_phase(params, pairs, sup, cfg.schedule[0], cfg)
        for n in partition_filter(params, "A"):
            assert np.array_equal(params.tensors[n], before[n]), n
        assert any(
            not np.array_equal(params.tensors[n], before[n])
            for n in partition_filter(params, "T")
        )

    def test_a_only_phase_freezes_t_tensors(self):
        params = make_params(2)
        pairs, sup = tiny_corpus()
        before = {n: params.tensors[n].copy() for n in params.names()}
        cfg = TrainConfig(schedule=[Phase(training.ALIGNMENT, "A", 2)], batch_size=3, seed=0)
        train_phase(params, pairs, sup, cfg.schedule[0], cfg)
        for n in partition_filter(params, "T"):
            assert np.array_equal(params.tensors[n], before[n]), n

    def test_zero_epoch_phase_is_noop(self):
        params = make_params(2)
        pairs, sup = tiny_corpus()
        before = {n: params.tensors[n].copy() for n in params.names()}
        cfg = TrainConfig(schedule=[Phase(training.JOINT, "ALL", 0)], batch_size=3)
        report = train_phase(params, pairs, sup, cfg.schedule[0], cfg)
        assert report.epochs == []
        for n in params.names():
            assert np.array_equal(params.tensors[n], before[n])

    def test_missing_supervision_fails_before_training(self):
        params = make_params()
        pairs, _ = tiny_corpus()
        cfg = TrainConfig(schedule=[Phase(training.ALIGNMENT, "A", 1)], batch_size=3)
        with pytest.raises(ValueError, match="supervision"):
            train_phase(params, pairs, None, cfg.schedule[0], cfg)

    def test_loss_decreases_on_small_corpus(self):
        params = make_params(5)
        pairs, sup = tiny_corpus(10, seed=1)
        cfg = TrainConfig(schedule=[Phase(training.JOINT, "ALL", 30)], batch_size=5, seed=1)
        report = train_phase(params, pairs, sup, cfg.schedule[0], cfg)
        first = report.epochs[0].mean_translation_loss + report.epochs[0].mean_alignment_distance
        last = report.epochs[-1].mean_translation_loss + report.epochs[-1].mean_alignment_distance
        assert last < first


class TestRunSchedule:
    def test_a_then_t_preserves_phase1_a_tensors(self):
        params = make_params(3)
        pairs, sup = tiny_corpus()
        cfg = TrainConfig(
            schedule=parse_schedule("ALIGN:A:1->TRANS:T:1"), batch_size=3, seed=0
        )
        phase1 = TrainConfig(schedule=[cfg.schedule[0]], batch_size=3, seed=0)
        snapshot = params.copy()
        train_phase(snapshot, pairs, sup, phase1.schedule[0], phase1)
        run_schedule(params, pairs, sup, cfg)
        for n in partition_filter(params, "A"):
            assert np.array_equal(params.tensors[n], snapshot.tensors[n]), n

    def test_lambda_zero_joint_reproduces_translation_bitwise(self):
        pairs, sup = tiny_corpus(8, seed=2)
        pj = make_params(4)
        cfg_j = TrainConfig(
            schedule=[Phase(training.JOINT, "ALL", 2)], batch_size=4, seed=7, align_weight=0.0
        )
        run_schedule(pj, pairs, sup, cfg_j)
        pt = make_params(4)
        cfg_t = TrainConfig(
            schedule=[Phase(training.TRANSLATION, "ALL", 2)], batch_size=4, seed=7
        )
        run_schedule(pt, pairs, None, cfg_t)
        for n in pj.names():
            assert np.array_equal(pj.tensors[n], pt.tensors[n]), n

    def test_checkpoints_written_per_phase(self, tmp_path):
        params = make_params()
        pairs, sup = tiny_corpus()
        cfg = TrainConfig(schedule=parse_schedule("ALIGN:A:1->JOINT:ALL:1"), batch_size=3)
        run_schedule(params, pairs, sup, cfg, checkpoint_prefix=str(tmp_path / "m"))
        assert (tmp_path / "m.phase1.ckpt").exists()
        assert (tmp_path / "m.phase2.ckpt").exists()
        assert (tmp_path / "m.ckpt").exists()


def test_batch_loss_matches_scalar_oracle():
    # the logged epoch means equal a direct per-sentence recomputation
    params = make_params(6)
    pairs, sup = tiny_corpus(5, seed=4)
    snapshot = params.copy()
    cfg = TrainConfig(schedule=[Phase(training.JOINT, "ALL", 1)], batch_size=5, seed=9)
    report = train_phase(params, pairs, sup, cfg.schedule[0], cfg)

    total_nll = total_dist = 0.0
    for pair, s in zip(pairs, sup):
        trace = forward_teacher_forced(snapshot, pair)
        total_nll += -sum(float(lp.data) for lp in trace.log_probs)
        total_dist += float(np.sqrt(((np.asarray(trace.attention.data) - s) ** 2).sum()))
    assert report.epochs[0].mean_translation_loss == pytest.approx(total_nll / 5, rel=1e-12)
    assert report.epochs[0].mean_alignment_distance == pytest.approx(total_dist / 5, rel=1e-12)


def test_clip_gradients_scales_to_max_norm():
    grads = {"a": np.array([3.0, 4.0]), "b": np.array([12.0])}
    training.clip_gradients(grads, ["a", "b"], 5.0)
    total = np.sqrt(sum(float((g**2).sum()) for g in grads.values()))
    assert total == pytest.approx(5.0)
    # direction preserved
    assert grads["a"][1] / grads["a"][0] == pytest.approx(4.0 / 3.0)
