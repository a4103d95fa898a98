import math

import numpy as np
import pytest
import torch

from mccseg.exceptions import DomainError, NumericError
from mccseg.losses import (
    LossWeights,
    Projector,
    affinity_loss,
    batch_mcc_loss,
    cls_loss,
    ema_update,
    mcc_loss,
    reg_loss,
    seg_loss,
    total_loss,
)
from mccseg.numerics import grad_check
from mccseg.pseudo import AFF_IGNORE, AFF_NEG, AFF_POS, IGNORE

f64 = torch.float64


def infonce_reference(q, keys, positive, tau, eps):
    q = q / np.linalg.norm(q)
    keys = keys / np.linalg.norm(keys, axis=1, keepdims=True)
    negs = [math.exp(q @ k / tau) for k, p in zip(keys, positive) if not p]
    terms = []
    for k, p in zip(keys, positive):
        if p:
            e = math.exp(q @ k / tau)
            terms.append(math.log(e / (e + sum(negs) + eps)))
    return -sum(terms) / len(terms)


class TestClsLoss:
    def test_zero_logits(self):
        for labels in ([0, 0, 0], [1, 0, 1], [1, 1, 1]):
            assert cls_loss(torch.zeros(3, dtype=f64), torch.tensor(labels)).item() == pytest.approx(math.log(2), abs=1e-12)

    def test_saturated(self):
        labels = torch.tensor([1, 0, 1, 0])
        logits = torch.tensor([20.0, -20.0, 20.0, -20.0], dtype=f64)
        assert cls_loss(logits, labels).item() < 1e-8

    def test_hand_value(self):
        val = cls_loss(torch.tensor([1.0, -1.0], dtype=f64), torch.tensor([1, 0])).item()
        expected = (math.log(1 + math.exp(-1)) + math.log(1 + math.exp(-1))) / 2
        assert val == pytest.approx(expected, abs=1e-12)
        assert val == pytest.approx(0.3133, abs=1e-4)

    def test_large_logits_finite(self):
        val = cls_loss(torch.tensor([800.0, -800.0], dtype=f64), torch.tensor([0, 1]))
        assert math.isfinite(val.item())


class TestMccLoss:
    def test_single_positive_no_negatives(self):
        q = torch.tensor([1.0, 2.0], dtype=f64)
        assert mcc_loss(q, torch.tensor([[3.0, -1.0]], dtype=f64), torch.tensor([True]), eps=0.0).item() == pytest.approx(0.0, abs=1e-15)

    def test_orthogonal_pair(self):
        q = torch.tensor([1.0, 0.0], dtype=f64)
        keys = torch.tensor([[0.0, 1.0], [0.0, -1.0]], dtype=f64)
        val = mcc_loss(q, keys, torch.tensor([True, False]), tau=0.5, eps=0.0).item()
        assert val == pytest.approx(math.log(2), abs=1e-12)

    def test_no_positive_contributes_zero(self):
        q = torch.randn(4, dtype=f64, requires_grad=True)
        val = mcc_loss(q, torch.randn(3, 4, dtype=f64), torch.tensor([False] * 3))
        assert val.item() == 0.0
        val.backward()
        assert torch.count_nonzero(q.grad) == 0

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_reference(self, seed):
        rng = np.random.default_rng(seed)
        q, keys = rng.normal(size=8), rng.normal(size=(5, 8))
        positive = rng.random(5) < 0.5
        positive[0] = True
        got = mcc_loss(torch.from_numpy(q), torch.from_numpy(keys), torch.from_numpy(positive), 0.5, 1e-8).item()
        assert got == pytest.approx(infonce_reference(q, keys, positive, 0.5, 1e-8), rel=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_gradient_wrt_query(self, seed):
        g = torch.Generator().manual_seed(seed)
        q = torch.randn(8, generator=g, dtype=f64, requires_grad=True)
        keys = torch.randn(6, 8, generator=g, dtype=f64)
        pos = torch.tensor([True, False, True, False, False, True])
        assert grad_check(lambda: mcc_loss(q, keys, pos), [q]) < 1e-3

    def test_directional_monotonicity(self):
        # q = e1; positive key at angle a, negative key at angle b
        def loss(a, b):
            q = torch.tensor([1.0, 0.0], dtype=f64)
            keys = torch.tensor([[math.cos(a), math.sin(a)], [math.cos(b), math.sin(b)]], dtype=f64)
            return mcc_loss(q, keys, torch.tensor([True, False])).item()

        angles = np.linspace(0.0, math.pi, 20)
        # smaller angle = larger q.k+; loss must grow with the positive angle
        pos_curve = [loss(a, 1.0) for a in angles]
        assert all(x < y for x, y in zip(pos_curve, pos_curve[1:]))
        # larger q.k- (smaller negative angle) must raise the loss
        neg_curve = [loss(0.5, b) for b in angles]
        assert all(x > y for x, y in zip(neg_curve, neg_curve[1:]))

    def test_batch_mean_and_pooling(self):
        g = torch.Generator().manual_seed(2)
        q = torch.randn(3, 4, generator=g, dtype=f64)
        keys = torch.randn(3, 2, 4, generator=g, dtype=f64)
        pos = torch.tensor([[True, False], [False, False], [False, True]])
        per = [mcc_loss(q[i], keys[i], pos[i]) for i in range(3)]
        assert batch_mcc_loss(q, keys, pos).item() == pytest.approx(sum(p.item() for p in per) / 3, rel=1e-12)
        pooled = batch_mcc_loss(q, keys, pos, pool_negatives=True)
        negs = keys[~pos]
        ref0 = mcc_loss(q[0], torch.cat([keys[0, :1], negs]), torch.tensor([True] + [False] * len(negs)))
        ref2 = mcc_loss(q[2], torch.cat([keys[2, 1:], negs]), torch.tensor([True] + [False] * len(negs)))
        assert pooled.item() == pytest.approx((ref0.item() + ref2.item()) / 3, rel=1e-12)


class TestEma:
    def _pair(self):
        torch.manual_seed(0)
        return Projector(4, 3).double(), Projector(4, 3).double()

    def test_momentum_one_keeps_global(self):
        g, l = self._pair()
        before = [p.clone() for p in g.parameters()]
        ema_update(g, l, 1.0)
        assert all(torch.equal(a, b) for a, b in zip(before, g.parameters()))

    def test_momentum_zero_copies_local(self):
        g, l = self._pair()
        ema_update(g, l, 0.0)
        assert all(torch.equal(a, b) for a, b in zip(g.parameters(), l.parameters()))

    def test_scalar_example(self):
        g, l = self._pair()
        with torch.no_grad():
            for p in g.parameters():
                p.fill_(1.0)
            for p in l.parameters():
                p.fill_(0.0)
        ema_update(g, l, 0.9)
        assert all(torch.all(p == 0.9) for p in g.parameters())

    def test_exact_update_and_local_untouched(self):
        g, l = self._pair()
        prev_g = [p.clone() for p in g.parameters()]
        prev_l = [p.clone() for p in l.parameters()]
        ema_update(g, l, 0.9)
        for pg, a, b in zip(g.parameters(), prev_g, prev_l):
            assert torch.equal(pg, 0.9 * a + (1 - 0.9) * b)
        assert all(torch.equal(a, b) for a, b in zip(l.parameters(), prev_l))

    def test_invalid_momentum(self):
        g, l = self._pair()
        with pytest.raises(DomainError):
            ema_update(g, l, 1.5)


class TestAffinityLoss:
    def test_identical_tokens(self):
        tokens = torch.ones(3, 4, dtype=f64)
        assert affinity_loss(tokens, torch.full((4, 4), AFF_POS)).item() == pytest.approx(0.0, abs=1e-15)

    def test_orthogonal_negative(self):
        tokens = torch.tensor([[1.0, 0.0], [0.0, 1.0]], dtype=f64)
        pairs = torch.tensor([[AFF_IGNORE, AFF_NEG], [AFF_NEG, AFF_IGNORE]])
        assert affinity_loss(tokens, pairs).item() == pytest.approx(0.0, abs=1e-15)

    def test_positive_pair_cos_half(self):
        tokens = torch.tensor([[1.0, 0.5], [0.0, math.sqrt(3) / 2]], dtype=f64)
        pairs = torch.tensor([[AFF_IGNORE, AFF_POS], [AFF_IGNORE, AFF_IGNORE]])
        assert affinity_loss(tokens, pairs).item() == pytest.approx(0.5, abs=1e-12)

    def test_zero_norm_token_skipped(self):
        tokens = torch.tensor([[1.0, 0.0, 2.0], [0.0, 0.0, 0.0]], dtype=f64)
        pairs = torch.full((3, 3), AFF_POS)
        loss, stats = affinity_loss(tokens, pairs, return_stats=True)
        assert stats["skipped"] == 5
        assert loss.item() == pytest.approx(0.0, abs=1e-15)

    def test_brute_force(self):
        rng = np.random.default_rng(0)
        tokens = rng.normal(size=(5, 9))
        pairs = rng.choice([AFF_NEG, AFF_POS, AFF_IGNORE], size=(9, 9))
        pos, neg = [], []
        for i in range(9):
            for j in range(9):
                c = tokens[:, i] @ tokens[:, j] / np.linalg.norm(tokens[:, i]) / np.linalg.norm(tokens[:, j])
                if pairs[i, j] == AFF_POS:
                    pos.append(1 - c)
                elif pairs[i, j] == AFF_NEG:
                    neg.append(c)
        expected = np.mean(pos) + np.mean(neg)
        got = affinity_loss(torch.from_numpy(tokens), torch.from_numpy(pairs)).item()
        assert got == pytest.approx(expected, rel=1e-12)

    @pytest.mark.parametrize("seed", range(10))
    def test_gradient_step_decreases_loss(self, seed):
        g = torch.Generator().manual_seed(seed)
        tokens = torch.randn(6, 10, generator=g, dtype=f64, requires_grad=True)
        lab = torch.randint(0, 3, (10,), generator=g)
        pairs = (lab[:, None] == lab[None, :]).to(torch.uint8)
        loss = affinity_loss(tokens, pairs)
        loss.backward()
        with torch.no_grad():
            stepped = affinity_loss(tokens - 1e-3 * tokens.grad, pairs)
        assert stepped.item() < loss.item()


class TestSegLoss:
    def test_saturated_prediction(self):
        target = torch.tensor([[0, 2], [1, 3]])
        pred = torch.nn.functional.one_hot(target, 4).permute(2, 0, 1).to(f64) * 50.0
        assert seg_loss(pred, target).item() < 1e-15

    def test_uniform_logits(self):
        target = torch.tensor([[0, 2], [IGNORE, 3]])
        assert seg_loss(torch.zeros(4, 2, 2, dtype=f64), target).item() == pytest.approx(math.log(4), abs=1e-12)

    def test_all_ignored(self):
        loss, stats = seg_loss(torch.randn(4, 2, 2, dtype=f64), torch.full((2, 2), IGNORE), return_stats=True)
        assert loss.item() == 0.0 and stats["all_ignored"]


class TestRegLoss:
    def test_constant_map(self):
        assert reg_loss(torch.full((3, 4, 4), 1 / 3, dtype=f64)).item() == 0.0

    def test_vertical_step_edge(self):
        # channel 0 is 1 on the left column, channel 1 on the right column
        probs = torch.tensor([[[1.0, 0.0], [1.0, 0.0]], [[0.0, 1.0], [0.0, 1.0]]], dtype=f64)
        horiz = [abs(probs[c, i, 1] - probs[c, i, 0]).item() for c in range(2) for i in range(2)]
        vert = [abs(probs[c, 1, j] - probs[c, 0, j]).item() for c in range(2) for j in range(2)]
        expected = sum(horiz) / len(horiz) + sum(vert) / len(vert)
        assert expected == 1.0
        assert reg_loss(probs).item() == expected

    def test_size_doubling_constant(self):
        assert reg_loss(torch.full((2, 8, 8), 0.5, dtype=f64)).item() == 0.0


class TestTotalLoss:
    def _parts(self, v):
        return {k: torch.tensor(v, dtype=f64) for k in ("cls", "cls_aux", "aff", "mcc", "seg", "reg")}

    def test_zero(self):
        assert total_loss(self._parts(0.0)).item() == 0.0

    def test_default_weights(self):
        assert LossWeights() == LossWeights(0.2, 0.5, 0.1, 0.05)
        assert total_loss(self._parts(1.0)).item() == pytest.approx(2.85, abs=1e-12)

    def test_baseline_switch(self):
        parts = self._parts(1.0)
        parts["mcc"] = torch.tensor(123.0, dtype=f64)
        assert total_loss(parts, LossWeights(mcc=0.0)).item() == pytest.approx(2.35, abs=1e-12)

    def test_linear_in_each_weight(self):
        rng = np.random.default_rng(0)
        parts = {k: torch.tensor(v, dtype=f64) for k, v in zip(("cls", "cls_aux", "aff", "mcc", "seg", "reg"), rng.random(6))}
        for name in ("aff", "mcc", "seg", "reg"):
            vals = [total_loss(parts, LossWeights(**{name: w})).item() for w in (0.0, 1.0, 2.0)]
            assert vals[2] - vals[1] == pytest.approx(vals[1] - vals[0], abs=1e-12)
            assert vals[1] - vals[0] == pytest.approx(parts[name].item(), abs=1e-12)

    def test_non_finite_named(self):
        parts = self._parts(1.0)
        parts["seg"] = torch.tensor(float("nan"))
        with pytest.raises(NumericError) as info:
            total_loss(parts)
        assert info.value.offender == "seg"

    def test_negative_weight(self):
        with pytest.raises(DomainError):
            LossWeights(aff=-1.0)
