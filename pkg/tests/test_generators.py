import json

import numpy as np
import pytest

from conftest import blob_mask, textured_image
from flowsim.backends import start_stub_backend
from flowsim.errors import (
    BackendTimeout,
    EmptyMask,
    IncompleteSequence,
    InvalidDimensions,
)
from flowsim.flow_core import boundary_contrast, flow_stats
from flowsim.generators import (
    GenerationConfig,
    WarpParams,
    backward_warp,
    generate_external,
    generate_identity,
    generate_spatial_warp,
    generate_synthetic_scene,
    sample_warp_params,
)


class TestIdentity:
    def test_frames_equal_source(self, small_image):
        seq = generate_identity(small_image, 3)
        assert len(seq) == 3
        for f in seq.frames:
            assert (f.pixels == small_image.pixels).all()

    def test_singleton(self, small_image):
        assert len(generate_identity(small_image, 1)) == 1


class TestSpatialWarp:
    def test_identity_warp(self, small_image):
        params = WarpParams()
        seq, flows = generate_spatial_warp(small_image, params, 2)
        for frame, flow in zip(seq.frames, flows):
            assert frame.pixels == pytest.approx(small_image.pixels, abs=1e-6)
            assert flow_stats(flow)["max_mag"] < 1e-6

    def test_pure_translation(self):
        img = textured_image(100, 100, seed=4)
        params = WarpParams(translation=(0.05, 0.0))
        _, flows = generate_spatial_warp(img, params, 1)
        assert flows[0].u == pytest.approx(5.0, abs=1e-9)
        assert flows[0].v == pytest.approx(0.0, abs=1e-9)

    def test_pure_rotation_magnitude(self):
        img = textured_image(64, 64, seed=5)
        theta = 10.0
        params = WarpParams(rotation=theta)
        _, flows = generate_spatial_warp(img, params, 1)
        mag = flows[0].magnitude()
        cy, cx = (64 - 1) / 2, (64 - 1) / 2
        ys, xs = np.mgrid[0:64, 0:64]
        dist = np.hypot(ys - cy, xs - cx)
        expected = 2 * np.sin(np.deg2rad(theta) / 2) * dist
        assert mag == pytest.approx(expected, abs=1e-9)

    def test_reconstruction_by_analytic_flow(self):
        img = textured_image(96, 96, seed=6, smooth=3.0)
        params = WarpParams(rotation=4.0, scale=1.02, translation=(0.02, -0.01),
                            tps_jitter=0.01, seed=11)
        seq, flows = generate_spatial_warp(img, params, 2)
        for frame, flow in zip(seq.frames, flows):
            rec = backward_warp(frame, flow)
            interior = np.abs(rec.pixels - img.pixels)[12:-12, 12:-12]
            assert interior.mean() < 0.05

    def test_deterministic_for_seed(self, small_image):
        params = WarpParams(rotation=3.0, tps_jitter=0.02, seed=9)
        seq1, flows1 = generate_spatial_warp(small_image, params, 2)
        seq2, flows2 = generate_spatial_warp(small_image, params, 2)
        for a, b in zip(seq1.frames, seq2.frames):
            assert (a.pixels == b.pixels).all()
        for a, b in zip(flows1, flows2):
            assert (a.u == b.u).all()

    def test_warp_flow_is_smooth(self):
        img = textured_image(64, 64, seed=8)
        mask = blob_mask(64, 64)
        params = WarpParams(rotation=8.0, scale=1.04, translation=(0.04, 0.02),
                            tps_jitter=0.02, seed=3)
        _, flows = generate_spatial_warp(img, params, 1)
        assert boundary_contrast(flows[0], mask.values, band=3) <= 0.3

    def test_sampled_params_within_ranges(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            p = sample_warp_params(rng)
            assert -10 <= p.rotation <= 10
            assert 0.95 <= p.scale <= 1.05
            assert all(-0.05 <= t <= 0.05 for t in p.translation)


class TestSyntheticScene:
    def test_piecewise_flow(self):
        img = textured_image(64, 64, seed=10)
        mask = blob_mask(64, 64)
        _, flows = generate_synthetic_scene(mask, img, (2.0, 0.0), (0.0, 0.0), 1)
        m = mask.values > 0.5
        assert flows[0].u[m] == pytest.approx(2.0)
        assert flows[0].u[~m] == pytest.approx(0.0)
        assert flows[0].v == pytest.approx(0.0)

    def test_degenerate_global_motion(self):
        img = textured_image(48, 48, seed=11)
        mask = blob_mask(48, 48)
        _, flows = generate_synthetic_scene(mask, img, (1.0, 1.0), (1.0, 1.0), 2)
        for t, flow in enumerate(flows, start=1):
            assert flow.u == pytest.approx(float(t))
            assert flow.v == pytest.approx(float(t))

    def test_velocity_times_t(self):
        img = textured_image(64, 64, seed=12)
        mask = blob_mask(64, 64)
        _, flows = generate_synthetic_scene(mask, img, (3.0, 0.0), (-1.0, 0.0), 2)
        m = mask.values > 0.5
        assert flows[1].u[m] == pytest.approx(6.0)
        assert flows[1].u[~m] == pytest.approx(-2.0)

    def test_empty_mask_rejected(self, small_image):
        from flowsim.media_io import SaliencyMap

        empty = SaliencyMap(np.zeros((32, 32)), is_binary=True)
        with pytest.raises(EmptyMask):
            generate_synthetic_scene(empty, small_image, (1, 0), (0, 0), 1)

    def test_mask_aligned_discontinuity(self):
        img = textured_image(64, 64, seed=13)
        mask = blob_mask(64, 64)
        _, flows = generate_synthetic_scene(mask, img, (3.0, 0.0), (0.0, 0.0), 1)
        assert boundary_contrast(flows[0], mask.values, band=3) >= 1.0

    def test_reconstruction_interior(self):
        img = textured_image(96, 96, seed=14, smooth=3.0)
        mask = blob_mask(96, 96, cy=40, cx=40, radius=15)
        seq, flows = generate_synthetic_scene(mask, img, (4.0, 2.0), (1.0, 0.0), 1)
        rec = backward_warp(seq.frames[0], flows[0])
        err = np.abs(rec.pixels - img.pixels).mean(axis=-1)
        # occluded/disoccluded band around the object is excluded
        from scipy import ndimage

        excl = ndimage.binary_dilation(mask.values > 0.5, iterations=10)
        interior = err[8:-8, 8:-8][~excl[8:-8, 8:-8]]
        assert interior.mean() < 0.05


class TestExternal:
    def test_stub_behaves_as_identity(self, tmp_path, small_image):
        backend = tmp_path / "exchange"
        thread, stop = start_stub_backend(backend, kind="generation")
        try:
            cfg = GenerationConfig(num_frames=3, resolution=(32, 32), seed=1)
            seq = generate_external(small_image, cfg, backend, timeout=10)
        finally:
            stop.set()
            thread.join()
        assert len(seq) == 3
        for f in seq.frames:
            # one 8-bit round trip through the exchange directory
            assert np.abs(f.pixels - small_image.pixels).max() <= 1 / 255 + 1e-9

    def test_incomplete_sequence(self, tmp_path, small_image):
        backend = tmp_path / "exchange"
        thread, stop = start_stub_backend(backend, kind="generation", drop_last=1)
        try:
            cfg = GenerationConfig(num_frames=3, resolution=(32, 32), seed=2)
            with pytest.raises(IncompleteSequence):
                generate_external(small_image, cfg, backend, timeout=10)
        finally:
            stop.set()
            thread.join()

    def test_timeout(self, tmp_path, small_image):
        backend = tmp_path / "exchange"
        backend.mkdir()
        cfg = GenerationConfig(num_frames=2, resolution=(32, 32))
        with pytest.raises(BackendTimeout):
            generate_external(small_image, cfg, backend, timeout=0.2)

    def test_request_descriptor_defaults(self, tmp_path, small_image):
        backend = tmp_path / "exchange"
        thread, stop = start_stub_backend(backend, kind="generation")
        try:
            generate_external(small_image, GenerationConfig(), backend, timeout=20)
        finally:
            stop.set()
            thread.join()
        descriptors = list(backend.glob("*/request.json"))
        assert len(descriptors) == 1
        req = json.loads(descriptors[0].read_text())
        assert req["sampler_steps"] == 25
        assert req["T"] == 14
        assert req["guidance_first"] == 3.0
        assert req["guidance_last"] == 1.0
        assert req["frame_rate"] == 7
        assert req["decode_chunk"] == 8
        assert req["resolution"] == [576, 1024]


class TestConfigValidation:
    def test_bad_guidance(self):
        with pytest.raises(InvalidDimensions):
            GenerationConfig(guidance_first=0.0)

    def test_bad_frames(self):
        with pytest.raises(InvalidDimensions):
            GenerationConfig(num_frames=0)

    def test_every_generator_yields_T_frames_at_source_res(self, small_image, small_mask):
        T = 4
        seqs = [generate_identity(small_image, T)]
        seqs.append(generate_spatial_warp(small_image, WarpParams(rotation=2.0), T)[0])
        seqs.append(
            generate_synthetic_scene(small_mask, small_image, (1, 0), (0, 0), T)[0]
        )
        for seq in seqs:
            assert len(seq) == T
            for f in seq.frames:
                assert (f.height, f.width) == (small_image.height, small_image.width)
