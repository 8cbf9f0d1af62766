import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from torch.nn import functional as F

from fuda.config import SegConfig
from fuda.errors import ShapeError
from fuda.seg_losses import ce_loss, consistency_loss, jaccard_loss, seg_total_loss
from fuda.segmenter import DRUNet


def random_labels(gen, b=2, hw=8):
    return torch.randint(0, 4, (b, hw, hw), generator=gen)


class TestCrossEntropy:
    def test_perfect_prediction_approaches_zero(self):
        y = torch.tensor([[[0, 1], [2, 3]]])
        logits = F.one_hot(y, 4).permute(0, 3, 1, 2).float() * 1e4
        assert ce_loss(logits, y).item() == pytest.approx(0.0, abs=1e-6)

    def test_uniform_logits_give_log4(self):
        y = torch.tensor([[[0, 1], [2, 3]]])
        logits = torch.zeros(1, 4, 2, 2)
        assert ce_loss(logits, y).item() == pytest.approx(math.log(4), rel=1e-6)

    def test_duplicating_batch_keeps_mean(self):
        gen = torch.Generator().manual_seed(0)
        logits = torch.randn(2, 4, 8, 8, generator=gen)
        y = random_labels(gen)
        single = ce_loss(logits, y).item()
        double = ce_loss(torch.cat([logits, logits]), torch.cat([y, y])).item()
        assert double == pytest.approx(single, rel=1e-6)


class TestJaccard:
    def test_one_hot_match_is_zero(self):
        gen = torch.Generator().manual_seed(1)
        y = random_labels(gen)
        probs = F.one_hot(y, 4).permute(0, 3, 1, 2).float()
        assert jaccard_loss(probs, y).item() == pytest.approx(0.0, abs=1e-6)

    def test_fully_disjoint_class_term_saturates(self):
        # Prediction puts all mass on class 1 where truth is class 0.
        y = torch.zeros(1, 4, 4, dtype=torch.long)
        probs = torch.zeros(1, 4, 4, 4)
        probs[:, 1] = 1.0
        # class-0 term: 1, class-1 term: 1, classes 2/3 absent from both: 0.
        assert jaccard_loss(probs, y).item() == pytest.approx(0.5, abs=1e-6)

    def test_two_by_two_counting(self):
        # Pred class-1 covers {(0,0),(0,1)}, truth class-1 covers {(0,0),(1,0)}:
        # intersection 1, union 3 for both class 1 and the complementary class 0,
        # so the 4-class mean is (2/3 + 2/3 + 0 + 0) / 4 = 1/3.
        pred = torch.tensor([[[1, 1], [0, 0]]])
        y = torch.tensor([[[1, 0], [1, 0]]])
        probs = F.one_hot(pred, 4).permute(0, 3, 1, 2).float()
        assert jaccard_loss(probs, y).item() == pytest.approx(1 / 3, abs=1e-6)

    def test_within_unit_interval(self):
        gen = torch.Generator().manual_seed(2)
        probs = F.softmax(torch.randn(3, 4, 8, 8, generator=gen), dim=1)
        val = jaccard_loss(probs, random_labels(gen, b=3)).item()
        assert 0.0 <= val <= 1.0

    @given(st.integers(0, 10_000))
    @settings(max_examples=30, deadline=None)
    def test_pixel_permutation_equivariant(self, seed):
        gen = torch.Generator().manual_seed(seed)
        probs = F.softmax(torch.randn(1, 4, 4, 4, generator=gen), dim=1)
        y = random_labels(gen, b=1, hw=4)
        perm = torch.randperm(16, generator=gen)
        probs_p = probs.reshape(1, 4, 16)[:, :, perm].reshape(1, 4, 4, 4)
        y_p = y.reshape(1, 16)[:, perm].reshape(1, 4, 4)
        a = jaccard_loss(probs, y).item()
        b = jaccard_loss(probs_p, y_p).item()
        assert a == pytest.approx(b, rel=1e-6)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            jaccard_loss(torch.rand(1, 4, 4, 4), torch.zeros(1, 5, 5, dtype=torch.long))


class TestConsistency:
    def test_equal_features_zero(self):
        z = torch.randn(2, 8, 4, 4)
        assert consistency_loss(z, z).item() == 0.0

    def test_unit_perturbation_is_one(self):
        z = torch.randn(1, 8, 4, 4)
        z2 = z.clone()
        z2[0, 3, 1, 2] += 1.0
        assert consistency_loss(z, z2).item() == pytest.approx(1.0, rel=1e-6)

    def test_matches_brute_force_norm(self):
        gen = torch.Generator().manual_seed(3)
        a = torch.randn(3, 2, 3, 3, generator=gen, dtype=torch.float64)
        b = torch.randn(3, 2, 3, 3, generator=gen, dtype=torch.float64)
        expected = 0.0
        for i in range(3):
            expected += math.sqrt(((a[i] - b[i]) ** 2).sum().item())
        expected /= 3
        assert consistency_loss(a, b).item() == pytest.approx(expected, rel=1e-12)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            consistency_loss(torch.zeros(1, 2, 3, 3), torch.zeros(1, 2, 4, 4))


class TestTotalLoss:
    def make_inputs(self, seed=4):
        gen = torch.Generator().manual_seed(seed)
        logits = torch.randn(2, 4, 8, 8, generator=gen)
        y = random_labels(gen)
        z_s = torch.randn(2, 6, 2, 2, generator=gen)
        z_t = torch.randn(2, 6, 2, 2, generator=gen)
        return logits, y, z_s, z_t

    def test_zero_lambda_collapses_to_seg(self):
        logits, y, z_s, z_t = self.make_inputs()
        parts = seg_total_loss(logits, None, y, z_s, z_t, lam=0.0)
        assert parts.total.item() == pytest.approx(parts.seg.item(), rel=1e-7)

    def test_equal_features_collapse_to_seg(self):
        logits, y, z_s, _ = self.make_inputs()
        parts = seg_total_loss(logits, None, y, z_s, z_s, lam=123.0)
        assert parts.con.item() == 0.0
        assert parts.total.item() == pytest.approx(parts.seg.item(), rel=1e-7)

    def test_weighted_sum_arithmetic(self):
        # Component values (seg, con) combine as seg + lambda * con;
        # e.g. seg parts summing to 1.5 with con 10 and lambda 2e-3 give 1.52.
        logits, y, z_s, z_t = self.make_inputs()
        lam = 2e-3
        parts = seg_total_loss(logits, None, y, z_s, z_t, lam=lam)
        assert parts.total.item() == pytest.approx(
            parts.seg.item() + lam * parts.con.item(), rel=1e-7)
        assert 1.5 + lam * 10.0 == pytest.approx(1.52)

    def test_components_nonnegative_and_ordered(self):
        logits, y, z_s, z_t = self.make_inputs()
        parts = seg_total_loss(logits, None, y, z_s, z_t, lam=2e-3)
        assert parts.seg.item() >= 0 and parts.con.item() >= 0
        assert parts.total.item() >= parts.seg.item()

    def test_seg_equals_ce_plus_jaccard(self):
        logits, y, z_s, z_t = self.make_inputs()
        probs = F.softmax(logits, dim=1)
        parts = seg_total_loss(logits, probs, y, z_s, z_t, lam=0.0)
        expected = ce_loss(logits, y) + jaccard_loss(probs, y)
        assert parts.seg.item() == pytest.approx(expected.item(), rel=1e-7)


def test_parameter_gradients_match_finite_differences():
    # Analytic d(total)/d(theta) vs central differences on a tiny float64
    # network at 8x8, every parameter coordinate.
    torch.manual_seed(5)
    net = DRUNet(SegConfig(widths=(2, 2, 3), dilations=(1, 2))).double()
    gen = torch.Generator().manual_seed(6)
    x = torch.rand(1, 1, 8, 8, generator=gen, dtype=torch.float64)
    y = torch.randint(0, 4, (1, 8, 8), generator=gen)
    z_ref = torch.randn(1, 3, 2, 2, generator=gen, dtype=torch.float64)

    def loss_value():
        out = net(x)
        return seg_total_loss(out.logits, None, y, z_ref, out.bottleneck, lam=0.1).total

    loss = loss_value()
    params = [p for p in net.parameters() if p.requires_grad]
    grads = torch.autograd.grad(loss, params)
    h = 1e-6
    checked = 0
    with torch.no_grad():
        for p, g in zip(params, grads):
            flat = p.reshape(-1)
            gflat = g.reshape(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + h
                hi = loss_value().item()
                flat[i] = orig - h
                lo = loss_value().item()
                flat[i] = orig
                fd = (hi - lo) / (2 * h)
                scale = max(abs(fd), abs(gflat[i].item()), 1e-4)
                assert abs(gflat[i].item() - fd) / scale < 1e-3, \
                    f"param grad mismatch at {tuple(p.shape)}[{i}]: {gflat[i].item()} vs {fd}"
                checked += 1
    assert checked == sum(p.numel() for p in params)
