import numpy as np
import pytest
import torch

from dispfuse.core import NetConfig
from dispfuse.errors import ShapeError
from dispfuse.refiner import RefinerNet, build_refiner, refiner_forward


def _conv_params(cin, cout, k):
    return cout * cin * k * k + cout


def _bn_params(c):
    return 2 * c


def expected_refiner_params(cfg):
    """Independent layer-by-layer bookkeeping of the refiner parameter count."""
    growths = cfg.growth_for(cfg.lg, 6)
    total = _conv_params(cfg.c1 + cfg.c2, cfg.lg, 3)
    ch = cfg.lg
    stage_inputs, skips = [], []
    for i in range(3):
        stage_inputs.append(ch)
        for j in range(2):
            total += _bn_params(ch + j * growths[i])
            total += _conv_params(ch + j * growths[i], growths[i], 3)
        ch += 2 * growths[i]
        skips.append(ch)
        total += _bn_params(ch) + _conv_params(ch, ch, 4)
    for i in range(3):
        up_out = stage_inputs[2 - i]
        total += _bn_params(ch) + _conv_params(ch, up_out, 4)
        ch = up_out + skips[2 - i]
        for j in range(2):
            total += _bn_params(ch + j * growths[3 + i])
            total += _conv_params(ch + j * growths[3 + i], growths[3 + i], 3)
        ch += 2 * growths[3 + i]
    total += _conv_params(ch, 1, 3)
    return total


@pytest.fixture(scope="module")
def small_cfg():
    return NetConfig(batch=1, height=32, width=32, lg=4, ld=4, dropout_rate=0.5)


@pytest.fixture(scope="module")
def small_net(small_cfg):
    return build_refiner(small_cfg, seed=5)


class TestBuild:
    def test_same_seed_identical_parameters(self, small_cfg):
        a = build_refiner(small_cfg, seed=3)
        b = build_refiner(small_cfg, seed=3)
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert torch.equal(pa, pb)

    def test_different_seed_differs(self, small_cfg):
        a = build_refiner(small_cfg, seed=3)
        b = build_refiner(small_cfg, seed=4)
        assert any(
            not torch.equal(pa, pb) for pa, pb in zip(a.parameters(), b.parameters())
        )

    @pytest.mark.parametrize(
        "cfg",
        [
            NetConfig(batch=1, height=32, width=32, lg=4, ld=4),
            NetConfig(batch=1, height=64, width=96, lg=12, ld=12),
            NetConfig(batch=1, height=32, width=32, lg=6, ld=6, growth_rates=(3, 5, 7)),
            NetConfig(batch=1, height=32, width=32, lg=5, ld=5, c1=3),
        ],
    )
    def test_parameter_count_matches_bookkeeping(self, cfg):
        net = RefinerNet(cfg)
        assert sum(p.numel() for p in net.parameters()) == expected_refiner_params(cfg)

    def test_init_statistics(self):
        cfg = NetConfig(batch=1, height=32, width=32, lg=12, ld=12, init_std=0.02)
        net = build_refiner(cfg, seed=0)
        weights = torch.cat(
            [m.weight.flatten() for m in net.modules() if isinstance(m, torch.nn.Conv2d)]
        )
        assert abs(weights.std().item() - 0.02) < 0.002
        assert abs(weights.mean().item()) < 0.002


class TestForward:
    @pytest.mark.parametrize("size", [(32, 32), (96, 128), (64, 160)])
    def test_resolution_preserved(self, small_cfg, small_net, size):
        x = torch.randn(1, 4, *size)
        with torch.no_grad():
            out = refiner_forward(small_net, x, training=False)
        assert out.shape == (1, 1, *size)

    def test_inference_deterministic(self, small_net):
        x = torch.randn(2, 4, 32, 32)
        with torch.no_grad():
            a = refiner_forward(small_net, x, training=False)
            b = refiner_forward(small_net, x, training=False)
        assert torch.equal(a, b)

    def test_dropout_active_only_in_training(self, small_net):
        x = torch.randn(1, 4, 32, 32)
        torch.manual_seed(0)
        with torch.no_grad():
            a = refiner_forward(small_net, x, training=True)
            b = refiner_forward(small_net, x, training=True)
        assert not torch.equal(a, b)

    def test_output_strictly_inside_unit_interval(self, small_net):
        x = torch.randn(3, 4, 32, 32)
        with torch.no_grad():
            out = refiner_forward(small_net, x, training=False)
        assert out.min() > -1.0 and out.max() < 1.0

    def test_channel_mismatch_rejected(self, small_net):
        with pytest.raises(ShapeError):
            small_net(torch.randn(1, 3, 32, 32))

    def test_indivisible_size_rejected(self, small_net):
        with pytest.raises(ShapeError):
            small_net(torch.randn(1, 4, 36, 36))


class TestGradients:
    def test_jvp_matches_finite_differences(self, small_cfg):
        net = build_refiner(small_cfg, seed=9).double()
        net.train(False)
        rng = np.random.default_rng(0)
        x = torch.tensor(rng.uniform(-0.5, 0.5, (1, 4, 32, 32)), requires_grad=True)
        proj = torch.tensor(rng.standard_normal((1, 1, 32, 32)))
        out = (net(x) * proj).sum()
        (grad,) = torch.autograd.grad(out, x)

        v = torch.tensor(rng.standard_normal(x.shape))
        v /= v.norm()
        h = 1e-6
        with torch.no_grad():
            f_plus = (net(x + h * v) * proj).sum().item()
            f_minus = (net(x - h * v) * proj).sum().item()
        numeric = (f_plus - f_minus) / (2 * h)
        analytic = (grad * v).sum().item()
        assert abs(numeric - analytic) / max(abs(numeric), 1e-12) < 1e-4

    def test_every_parameter_receives_gradient(self, small_cfg):
        # evaluation mode: batch statistics would null out conv biases that
        # feed a later normalization, which is expected, not a dead branch
        net = build_refiner(small_cfg, seed=2)
        net.train(False)
        x = torch.randn(2, 4, 32, 32)
        loss = (net(x) * torch.randn(2, 1, 32, 32)).sum()
        loss.backward()
        for name, p in net.named_parameters():
            assert p.grad is not None, name
            assert p.grad.abs().max() > 0, name
