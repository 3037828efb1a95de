import numpy as np
import pytest

from cracenet.crace import CraceConfig
from cracenet.network import (
    EncoderConfig,
    InputSizeError,
    ModeError,
    NetworkConfig,
    SodNetwork,
)
from cracenet.tensor import Tensor, backward, zero_grads


def small_net(mode="rgb", depth_input=None, seed=0):
    if depth_input is None:
        depth_input = mode == "rgbd"
    cfg = NetworkConfig(
        EncoderConfig(widths=(4, 8, 12, 16)),
        CraceConfig(n=8, sampling_rates=(1, 2), dilation_rates=(1, 2), depth_input=depth_input),
        mode,
    )
    return SodNetwork(cfg, seed=seed)


def rand_image(b=1, side=64, channels=3, seed=0):
    return Tensor(np.random.default_rng(seed).uniform(size=(b, channels, side, side)))


class TestEncoder:
    def test_stride_ladder_64(self):
        net = small_net()
        feats = net.encode(rand_image())
        assert [f.shape[2] for f in feats] == [16, 8, 4, 2]
        assert [f.shape[1] for f in feats] == [4, 8, 12, 16]

    def test_stride_ladder_352(self):
        net = small_net()
        feats = net.encode(rand_image(side=352))
        assert [f.shape[2] for f in feats] == [88, 44, 22, 11]

    def test_indivisible_input_rejected(self):
        net = small_net()
        with pytest.raises(InputSizeError):
            net.encode(Tensor(np.zeros((1, 3, 60, 60))))

    def test_deterministic_for_fixed_seed(self):
        a = small_net(seed=5).encode(rand_image(seed=3))
        b = small_net(seed=5).encode(rand_image(seed=3))
        for fa, fb in zip(a, b):
            assert np.array_equal(fa.data, fb.data)

    def test_depth_ladder_and_mode_contract(self):
        net = small_net("rgbd")
        depth = Tensor(np.full((1, 1, 64, 64), 0.5))
        feats = net.encode_depth(depth)
        assert [f.shape[2] for f in feats] == [16, 8, 4, 2]
        assert all(np.isfinite(f.data).all() for f in feats)
        with pytest.raises(ModeError):
            small_net("rgb").encode_depth(depth)


class TestContextFlow:
    def test_three_fusion_modules(self):
        net = small_net()
        assert len([net.crace2, net.crace3, net.crace4]) == 3

    def test_refined_dims_track_encoder_dims(self):
        net = small_net()
        feats = net.encode(rand_image())
        refined = net.context_flow(feats)
        for refined_map, feat in zip(refined, feats):
            assert refined_map.shape[2:] == feat.shape[2:]
            assert refined_map.shape[1] == net.config.crace.n

    def test_depth_toggle_off_matches_rgb_path(self):
        rgb = small_net("rgb", seed=9)
        rgbd = small_net("rgbd", depth_input=False, seed=9)
        # graft the RGB network's shared parameters onto the RGB-D one
        rgb_params = dict(rgb.parameters())
        for name, param in rgbd.parameters():
            if name in rgb_params:
                param.data = rgb_params[name].data.copy()
        img = rand_image(seed=11)
        depth = Tensor(np.random.default_rng(12).uniform(size=(1, 1, 64, 64)))
        out_rgb = rgb.forward(img)
        out_rgbd = rgbd.forward(img, depth)
        for a, b in zip(out_rgb["saliency_logits"], out_rgbd["saliency_logits"]):
            assert np.array_equal(a.data, b.data)


class TestPredict:
    def test_four_saliency_four_edge_maps(self):
        out = small_net().forward(rand_image())
        assert len(out["saliency_logits"]) == 4
        assert len(out["edge_logits"]) == 4
        assert "depth_logits" not in out

    def test_final_map_at_input_resolution(self):
        out = small_net().forward(rand_image(side=96))
        for logits in out["saliency_logits"] + out["edge_logits"]:
            assert logits.shape == (1, 1, 96, 96)

    def test_logits_finite_probs_in_range(self):
        net = small_net()
        probs = net.infer(np.random.default_rng(1).uniform(size=(3, 64, 64)))
        assert probs.shape == (64, 64)
        assert np.all((probs > 0) & (probs < 1))

    def test_rgbd_adds_depth_maps(self):
        net = small_net("rgbd")
        depth = Tensor(np.random.default_rng(2).uniform(size=(1, 1, 64, 64)))
        out = net.forward(rand_image(), depth)
        assert len(out["depth_logits"]) == 4

    def test_mode_contracts(self):
        with pytest.raises(ModeError):
            small_net("rgb").forward(rand_image(), Tensor(np.zeros((1, 1, 64, 64))))
        with pytest.raises(ModeError):
            small_net("rgbd").forward(rand_image())


class TestTraining:
    def test_forward_backward_all_gradients_finite(self):
        net = small_net(seed=3)
        params = dict(net.parameters())
        img = rand_image(b=2, seed=4)
        out = net.forward(img, training=True)
        loss = None
        for logits in out["saliency_logits"] + out["edge_logits"]:
            term = (logits * logits).mean()
            loss = term if loss is None else loss + term
        zero_grads(params.values())
        backward(loss)
        for name, p in params.items():
            assert p.grad is not None, name
            assert np.isfinite(p.grad).all(), name

    def test_param_count_stable_and_frozen(self):
        a, b = small_net(seed=0), small_net(seed=99)
        assert a.param_count() == b.param_count()
        default = SodNetwork(NetworkConfig.default("rgb"), seed=0)
        assert default.param_count() == 1_075_710  # regression pin

    def test_export_load_round_trip(self):
        net = small_net(seed=6)
        arrays = net.export_arrays()
        other = small_net(seed=7)
        other.load_arrays(arrays)
        img = rand_image(seed=8)
        assert np.array_equal(
            net.forward(img)["saliency_logits"][0].data,
            other.forward(img)["saliency_logits"][0].data,
        )
