"""
Tests for CBAM channel and spatial gating.
"""

import pytest
import torch
import torch.nn as nn

from swnet.attention import CBAM, ChannelGate, SpatialGate


def zero_parameters(module: nn.Module) -> None:
    with torch.no_grad():
        for p in module.parameters():
            p.zero_()


class TestChannelGate:
    def test_zero_mlp_halves_input(self):
        gate = ChannelGate(8, ratio=4)
        zero_parameters(gate)
        x = torch.randn(2, 8, 5, 5)
        torch.testing.assert_close(gate(x), 0.5 * x)

    def test_constant_input_closed_form(self):
        gate = ChannelGate(8, ratio=4)
        c = torch.randn(1, 8)
        x = c[:, :, None, None].expand(1, 8, 6, 6).contiguous()
        expected = torch.sigmoid(2 * gate.mlp(c))
        torch.testing.assert_close(gate.attention(x), expected)

    def test_ratio_constant_over_space(self):
        gate = ChannelGate(4, ratio=2)
        x = torch.rand(1, 4, 6, 6) + 0.5
        ratio = gate(x) / x
        assert torch.allclose(ratio, ratio[:, :, :1, :1].expand_as(ratio))

    def test_invariant_to_spatial_shuffle(self):
        gate = ChannelGate(4, ratio=2)
        x = torch.randn(2, 4, 6, 6)
        perm = torch.randperm(36)
        shuffled = x.flatten(2)[:, :, perm].view_as(x)
        torch.testing.assert_close(gate.attention(shuffled), gate.attention(x))

    def test_ratio_must_divide_channels(self):
        with pytest.raises(ValueError, match="must divide"):
            ChannelGate(6, ratio=4)


class TestSpatialGate:
    def test_zero_conv_halves_input(self):
        gate = SpatialGate()
        zero_parameters(gate)
        x = torch.randn(1, 8, 16, 16)
        torch.testing.assert_close(gate(x), 0.5 * x)

    def test_ratio_constant_across_channels(self):
        gate = SpatialGate()
        x = torch.rand(1, 8, 16, 16) + 0.5
        ratio = gate(x) / x
        assert torch.allclose(ratio, ratio[:, :1].expand_as(ratio))

    def test_shape_preserved(self):
        x = torch.randn(1, 8, 16, 16)
        assert SpatialGate()(x).shape == x.shape


class TestCBAM:
    def test_zero_parameters_quarter_input(self):
        cbam = CBAM(8, ratio=4)
        zero_parameters(cbam)
        x = torch.randn(2, 8, 6, 6)
        torch.testing.assert_close(cbam(x), 0.25 * x)

    def test_disabled_is_pass_through(self):
        cbam = CBAM(8, ratio=4, enabled=False)
        x = torch.randn(2, 8, 6, 6)
        assert cbam(x) is x

    def test_disabled_keeps_parameter_names(self):
        on = set(dict(CBAM(8, 4).named_parameters()))
        off = set(dict(CBAM(8, 4, enabled=False).named_parameters()))
        assert on == off

    def test_output_bounded_by_input(self):
        cbam = CBAM(8, ratio=4)
        x = torch.randn(3, 8, 7, 7) * 5
        assert torch.all(cbam(x).abs() <= x.abs())

    def test_gradient_matches_finite_differences(self):
        cbam = CBAM(4, ratio=2).double()
        x = torch.randn(1, 4, 4, 4, dtype=torch.float64, requires_grad=True)
        assert torch.autograd.gradcheck(cbam, (x,), eps=1e-6, atol=1e-5, rtol=1e-4)
