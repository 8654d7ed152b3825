"""
Tests for the decoder, refinement formula and the full network.
"""

import pytest
import torch

from swnet.backbone import BackboneConfig
from swnet.decoder import (
    Decoder,
    DecoderBlock,
    PredictionBundle,
    SWNet,
    decoder_block,
    forward,
    refine_prediction,
    upsample2,
)
from swnet.losses import total_loss


def make_inputs(batch=2, side=64):
    return torch.rand(batch, 3, side, side), torch.rand(batch, 1, side, side)


class TestDecoderBlock:
    def test_shape_contract(self):
        x, skip = torch.randn(1, 8, 13, 13), torch.randn(1, 8, 26, 26)
        y = decoder_block(x, skip, DecoderBlock(8))
        assert y.shape == (1, 8, 26, 26)

    def test_zero_parameters_give_zero_map(self):
        block = DecoderBlock(8)
        with torch.no_grad():
            for p in block.parameters():
                p.zero_()
        y = block(torch.full((1, 8, 4, 4), 3.0), torch.randn(1, 8, 8, 8))
        assert torch.count_nonzero(y) == 0

    def test_spatial_mismatch(self):
        with pytest.raises(ValueError, match="twice"):
            DecoderBlock(8)(torch.randn(1, 8, 4, 4), torch.randn(1, 8, 6, 6))

    def test_upsampling_preserves_constants(self):
        x = torch.full((1, 2, 5, 5), 0.37)
        torch.testing.assert_close(upsample2(x), torch.full((1, 2, 10, 10), 0.37))


class TestRefinement:
    def test_saturated_negative_edge_is_no_op(self):
        mask = torch.rand(1, 1, 8, 8)
        final = refine_prediction(mask, torch.full_like(mask, -1e4))
        torch.testing.assert_close(final, mask, atol=1e-7, rtol=0)

    def test_zero_edge_scales_by_one_and_a_half(self):
        mask = torch.rand(1, 1, 8, 8)
        final = refine_prediction(mask, torch.zeros_like(mask))
        expected = (1.5 * mask).clamp(max=1.0)
        torch.testing.assert_close(final, expected, atol=1e-7, rtol=0)

    def test_zero_mask_annihilates(self):
        mask = torch.zeros(1, 1, 8, 8)
        final = refine_prediction(mask, torch.randn(1, 1, 8, 8))
        assert torch.count_nonzero(final) == 0

    def test_preclamp_never_below_mask(self):
        mask = torch.rand(2, 1, 8, 8)
        refined = refine_prediction(mask, torch.randn(2, 1, 8, 8), clamp=False)
        assert torch.all(refined >= mask)

    def test_no_edge_returns_mask(self):
        mask = torch.rand(1, 1, 4, 4)
        assert refine_prediction(mask, None) is mask


class TestPredictionBundle:
    def test_requires_four_masks(self):
        blank = torch.zeros(1, 1, 4, 4)
        with pytest.raises(ValueError, match="4 supervised"):
            PredictionBundle(masks=[blank] * 3, edge=None, final=blank)


class TestSWNet:
    def test_bundle_shapes_over_random_sizes(self):
        model = SWNet(BackboneConfig(), width=16)
        generator = torch.Generator().manual_seed(9)
        for _ in range(3):
            h, w = (32 * int(v) for v in torch.randint(1, 4, (2,), generator=generator))
            bundle = forward(model, torch.rand(1, 3, h, w), torch.rand(1, 1, h, w))
            assert len(bundle.masks) == 4
            assert all(tuple(m.shape) == (1, 1, h, w) for m in bundle.masks)
            assert tuple(bundle.edge.shape) == (1, 1, h, w)
            assert bundle.final.min() >= 0 and bundle.final.max() <= 1

    def test_final_matches_refinement_formula(self):
        model = SWNet(BackboneConfig(), width=16)
        bundle = model(*make_inputs())
        boost = 1 + torch.sigmoid(bundle.edge)
        expected = (bundle.mask_probability * boost).clamp(0, 1)
        torch.testing.assert_close(bundle.final, expected)

    def test_cbam_only_disables_refinement(self):
        model = SWNet(BackboneConfig(), width=16, use_edge=False)
        bundle = model(*make_inputs())
        assert bundle.edge is None
        torch.testing.assert_close(bundle.final, bundle.mask_probability)

    def test_deterministic(self):
        model = SWNet(BackboneConfig(), width=16)
        rgb, nir = make_inputs()
        first, second = model(rgb, nir), model(rgb, nir)
        assert torch.equal(first.final, second.final)
        for a, b in zip(first.masks, second.masks):
            assert torch.equal(a, b)

    def test_single_modality_feeds_both_branches(self):
        model = SWNet(BackboneConfig(), width=16, modality="nir")
        rgb, nir = make_inputs(batch=1)
        rgb_in, nir_in = model.branch_inputs(rgb, nir)
        assert torch.equal(rgb_in, nir_in)
        assert torch.equal(rgb_in[:, 0], nir[:, 0])

    def test_one_step_updates_every_head(self):
        model = SWNet(BackboneConfig(), width=16)
        rgb, nir = make_inputs(batch=1)
        mask = (torch.rand(1, 1, 64, 64) > 0.5).float()
        edge = (torch.rand(1, 1, 64, 64) > 0.8).float()
        heads = [h.weight.detach().clone() for h in model.decoder.seg_heads]
        edge_head = model.decoder.edge_head.weight.detach().clone()
        optimizer = torch.optim.SGD(model.parameters(), lr=0.1)
        total_loss(model(rgb, nir), mask, edge).total.backward()
        optimizer.step()
        for before, head in zip(heads, model.decoder.seg_heads):
            assert not torch.equal(before, head.weight)
        assert not torch.equal(edge_head, model.decoder.edge_head.weight)

    def test_full_backward_has_finite_gradients(self):
        model = SWNet(BackboneConfig(), width=16)
        rgb, nir = make_inputs()
        mask = (torch.rand(2, 1, 64, 64) > 0.5).float()
        edge = (torch.rand(2, 1, 64, 64) > 0.8).float()
        total_loss(model(rgb, nir), mask, edge).total.backward()
        for name, p in model.named_parameters():
            assert p.grad is not None, name
            assert torch.isfinite(p.grad).all(), name

    def test_smallest_input_trains(self):
        model = SWNet(BackboneConfig(), width=16).train()
        rgb, nir = make_inputs(batch=1, side=32)
        mask = (torch.rand(1, 1, 32, 32) > 0.5).float()
        edge = (torch.rand(1, 1, 32, 32) > 0.8).float()
        bundle = model(rgb, nir)
        assert tuple(bundle.final.shape) == (1, 1, 32, 32)
        total_loss(bundle, mask, edge).total.backward()
        for name, p in model.named_parameters():
            assert torch.isfinite(p.grad).all(), name

    def test_size_mismatch_between_modalities(self):
        model = SWNet(BackboneConfig(), width=16)
        with pytest.raises(ValueError, match="sizes differ"):
            model(torch.rand(1, 3, 64, 64), torch.rand(1, 1, 32, 32))


def test_decoder_requires_four_stages():
    with pytest.raises(ValueError, match="4 fused stages"):
        Decoder(8).stage_features([torch.zeros(1, 8, 4, 4)] * 3)
