import math

import numpy as np
import pytest
import torch

from mccl.classifier import (
    ClassifierConfig,
    Prediction,
    SmallCNN,
    ce_loss,
    clamp_diagnostics,
    classify,
)
from mccl.errors import ConfigError
from mccl.views import ViewKind


class TestSmallCNN:
    def test_untrained_output_in_unit_interval(self):
        model = SmallCNN(ClassifierConfig(input_channels=8, width=8, blocks=3), ViewKind.GRAY)
        pred = classify(torch.rand(8, 32, 32), model)
        assert 0.0 < pred.p_fake < 1.0
        assert pred.view is ViewKind.GRAY

    def test_eval_mode_deterministic(self):
        model = SmallCNN(ClassifierConfig(input_channels=4, width=8, blocks=3, dropout=0.3), ViewKind.EDGE)
        model.eval()
        feat = torch.rand(4, 32, 32)
        assert classify(feat, model).p_fake == classify(feat, model).p_fake

    def test_channel_mismatch_raises(self):
        model = SmallCNN(ClassifierConfig(input_channels=8, width=8, blocks=3))
        with pytest.raises(ConfigError):
            classify(torch.rand(4, 32, 32), model)

    def test_batched_logits_shape(self):
        model = SmallCNN(ClassifierConfig(input_channels=3, width=8, blocks=3))
        out = model(torch.rand(5, 3, 32, 32))
        assert out.shape == (5,)

    def test_backbone_validation(self):
        with pytest.raises(ConfigError):
            ClassifierConfig(backbone="resnet152")


class TestCeLoss:
    def test_analytic_value_at_half(self):
        loss = ce_loss(torch.tensor(0.5), torch.tensor(1.0))
        assert float(loss) == pytest.approx(math.log(2.0), rel=1e-6)

    def test_confident_correct_tends_to_zero(self):
        loss = ce_loss(torch.tensor(1.0 - 1e-7), torch.tensor(1.0))
        assert float(loss) < 1e-6

    def test_symmetric_pair(self):
        p = 0.73
        a = ce_loss(torch.tensor(p), torch.tensor(1.0))
        b = ce_loss(torch.tensor(1.0 - p), torch.tensor(0.0))
        assert float(a) == pytest.approx(float(b), rel=1e-6)

    def test_batch_mean_reduction(self):
        ps = torch.tensor([0.3, 0.9])
        ys = torch.tensor([0.0, 1.0])
        batched = float(ce_loss(ps, ys))
        singles = np.mean([float(ce_loss(p, y)) for p, y in zip(ps, ys)])
        assert batched == pytest.approx(singles, rel=1e-6)

    def test_non_negative(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            p = torch.tensor(rng.uniform(1e-6, 1 - 1e-6))
            y = torch.tensor(float(rng.integers(2)))
            assert float(ce_loss(p, y)) >= 0.0

    def test_out_of_range_probability_clamped_and_counted(self):
        clamp_diagnostics.reset()
        loss = ce_loss(torch.tensor(1.0), torch.tensor(0.0))
        assert math.isfinite(float(loss))
        assert clamp_diagnostics.count == 1

    def test_gradient_wrt_logit_is_p_minus_y(self):
        # composed sigmoid + cross entropy head
        for y_val in (0.0, 1.0):
            logit = torch.tensor(0.37, dtype=torch.float64, requires_grad=True)
            p = torch.sigmoid(logit)
            ce_loss(p, torch.tensor(y_val, dtype=torch.float64)).backward()
            assert float(logit.grad) == pytest.approx(float(p) - y_val, rel=1e-9)

    def test_gradient_matches_finite_differences(self):
        eps = 1e-7
        for y_val in (0.0, 1.0):
            p = torch.tensor(0.31, dtype=torch.float64, requires_grad=True)
            ce_loss(p, torch.tensor(y_val, dtype=torch.float64)).backward()
            num = (
                float(ce_loss(torch.tensor(0.31 + eps, dtype=torch.float64), torch.tensor(y_val)))
                - float(ce_loss(torch.tensor(0.31 - eps, dtype=torch.float64), torch.tensor(y_val)))
            ) / (2 * eps)
            assert float(p.grad) == pytest.approx(num, rel=1e-4)

    def test_shape_mismatch_raises(self):
        with pytest.raises(ConfigError):
            ce_loss(torch.tensor([0.5, 0.6]), torch.tensor(1.0))
