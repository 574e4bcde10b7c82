import numpy as np
import pytest
import torch

from conftest import textured_image
from flowsim.errors import InvalidDimensions, ShapeMismatch
from flowsim.flow_core import FlowField
from flowsim.segnet import (
    NetworkConfig,
    TwoStreamSegNet,
    count_parameters,
    forward,
    load_checkpoint,
    save_checkpoint,
)

DESK = NetworkConfig()


def random_inputs(size, batch=1, flow_ch=3, seed=0):
    g = torch.Generator().manual_seed(seed)
    return (
        torch.rand(batch, 3, size, size, generator=g),
        torch.randn(batch, flow_ch, size, size, generator=g),
    )


class TestForward:
    @pytest.mark.parametrize("size", [64, 128, 256])
    def test_resolution_preserved(self, size):
        model = TwoStreamSegNet(DESK)
        img, flo = random_inputs(size)
        out = model(img, flo)
        assert out.shape == (1, 1, size, size)

    def test_encoder_strides(self):
        model = TwoStreamSegNet(DESK)
        img, _ = random_inputs(128)
        feats = model.appearance(img)
        assert [f.shape[-1] for f in feats] == [32, 16, 8, 4]

    def test_zero_head_gives_half(self):
        model = TwoStreamSegNet(DESK)
        torch.nn.init.zeros_(model.head.weight)
        torch.nn.init.zeros_(model.head.bias)
        img = textured_image(64, 64, seed=1)
        flow = FlowField(np.zeros((64, 64)), np.zeros((64, 64)))
        pred = forward(img, flow, DESK, model)
        assert pred.probability == pytest.approx(0.5)

    def test_inference_deterministic(self):
        model = TwoStreamSegNet(DESK)
        img = textured_image(64, 64, seed=2)
        flow = FlowField(np.ones((64, 64)), np.zeros((64, 64)))
        a = forward(img, flow, DESK, model)
        b = forward(img, flow, DESK, model)
        assert (a.probability == b.probability).all()

    def test_shape_mismatch(self):
        model = TwoStreamSegNet(DESK)
        with pytest.raises(ShapeMismatch):
            model(torch.rand(1, 3, 64, 64), torch.rand(1, 3, 32, 32))

    def test_batch_permutation_equivariance(self):
        model = TwoStreamSegNet(DESK)
        model.eval()
        img, flo = random_inputs(64, batch=3, seed=3)
        with torch.no_grad():
            out = model(img, flo)
            perm = torch.tensor([2, 0, 1])
            out_perm = model(img[perm], flo[perm])
        assert torch.allclose(out[perm], out_perm)

    def test_all_parameters_get_gradients(self):
        model = TwoStreamSegNet(DESK)
        img, flo = random_inputs(64, batch=2, seed=4)
        loss = model(img, flo).square().mean()
        loss.backward()
        dead = [
            name
            for name, p in model.named_parameters()
            if p.grad is None or not p.grad.abs().sum() > 0
        ]
        assert dead == []


class TestAttentionGating:
    def test_disabled_attention_reduces_to_addition(self):
        model = TwoStreamSegNet(DESK)
        model.set_attention_enabled(False)
        fb = model.fusions[0]
        a = torch.randn(1, DESK.encoder_widths[0], 8, 8)
        m = torch.randn(1, DESK.encoder_widths[0], 8, 8)
        assert torch.allclose(fb(a, m), a + m)

    def test_enabled_attention_gates(self):
        model = TwoStreamSegNet(DESK)
        fb = model.fusions[0]
        a = torch.randn(1, DESK.encoder_widths[0], 8, 8)
        m = torch.randn(1, DESK.encoder_widths[0], 8, 8)
        gated = fb(a, m)
        # attention maps are in (0, 1): gated output is strictly shrunk
        assert gated.abs().sum() < (a + m).abs().sum()


class TestConfig:
    def test_raw_flow_mode(self):
        cfg = NetworkConfig(flow_input_mode="raw-2ch")
        model = TwoStreamSegNet(cfg)
        out = model(torch.rand(1, 3, 64, 64), torch.randn(1, 2, 64, 64))
        assert out.shape == (1, 1, 64, 64)

    def test_widths_must_increase(self):
        with pytest.raises(InvalidDimensions):
            NetworkConfig(encoder_widths=(64, 32, 128, 256))

    def test_four_stages_required(self):
        with pytest.raises(InvalidDimensions):
            NetworkConfig(encoder_widths=(32, 64, 128))


class TestCountParameters:
    def test_desk_config_under_5m(self):
        assert count_parameters(DESK) < 5_000_000

    def test_identical_configs_identical_counts(self):
        assert count_parameters(DESK) == count_parameters(NetworkConfig())

    def test_doubling_widths_scales_in_2_4(self):
        small = NetworkConfig(encoder_widths=(32, 64, 128, 256), decoder_widths=(128, 64, 32, 16))
        big = NetworkConfig(encoder_widths=(64, 128, 256, 512), decoder_widths=(256, 128, 64, 32))
        ratio = count_parameters(big) / count_parameters(small)
        assert 2.0 < ratio <= 4.0


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        model = TwoStreamSegNet(DESK)
        save_checkpoint(model, tmp_path / "ckpt.pt")
        back = load_checkpoint(tmp_path / "ckpt.pt")
        assert back.config == model.config
        for (n1, p1), (n2, p2) in zip(
            model.state_dict().items(), back.state_dict().items()
        ):
            assert n1 == n2
            assert (p1 == p2).all()
