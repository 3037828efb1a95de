import numpy as np
import pytest

from cracenet.crace import CraceConfig
from cracenet.data import gen_synthetic, load_checkpoint, load_dataset
from cracenet.network import EncoderConfig, NetworkConfig
from cracenet.tensor import Tensor
from cracenet.trainer import (
    ABLATION_SCHEDULE,
    DivergenceError,
    TrainConfig,
    augment,
    build_model_from_checkpoint,
    evaluate_model,
    flip_horizontal,
    format_ablation_table,
    lr_multiplier,
    predict_maps,
    random_crop,
    run_ablation,
    sgd_step,
    snap32,
    train,
)


def tiny_net_cfg(mode="rgb"):
    return NetworkConfig(
        EncoderConfig(widths=(4, 8, 12, 16)),
        CraceConfig(n=8, sampling_rates=(1, 2), dilation_rates=(1, 2),
                    depth_input=(mode == "rgbd")),
        mode,
    )


def tiny_train_cfg(**kw):
    base = dict(total_steps=6, batch_size=2, input_size=32, seed=1,
                multiscale=False, checkpoint_interval=3)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data") / "train"
    gen_synthetic(root, n=4, size=32, seed=2, with_depth=True)
    return load_dataset(root, with_depth=True)


class TestSgdStep:
    def run_steps(self, grads, momentum=0.0, wd=0.0, lr=0.1):
        cfg = TrainConfig(momentum=momentum, weight_decay=wd, lr_head=lr,
                          lr_backbone=lr / 10.0, input_size=32)
        p = Tensor(np.zeros(1), requires_grad=True)
        params = {"head.w": p}
        vel = {"head.w": np.zeros(1)}
        for g in grads:
            p.grad = np.array([g])
            sgd_step(params, vel, cfg)
        return p.data[0]

    def test_vanilla_step(self):
        assert self.run_steps([1.0]) == pytest.approx(-0.1, abs=1e-15)

    def test_momentum_unrolled_two_steps(self):
        # v1 = 1, p1 = -1; v2 = 0.9 + 1 = 1.9, p2 = -2.9
        assert self.run_steps([1.0, 1.0], momentum=0.9, lr=1.0) == pytest.approx(-2.9, abs=1e-12)

    def test_decay_only_shrinks(self):
        cfg = TrainConfig(momentum=0.0, weight_decay=0.1, lr_head=0.5,
                          lr_backbone=0.05, input_size=32)
        p = Tensor(np.array([2.0]), requires_grad=True)
        params, vel = {"x": p}, {"x": np.zeros(1)}
        p.grad = np.zeros(1)
        sgd_step(params, vel, cfg)
        assert 0.0 < p.data[0] < 2.0

    def test_backbone_gets_smaller_rate(self):
        cfg = TrainConfig(momentum=0.0, weight_decay=0.0, input_size=32)
        pb = Tensor(np.zeros(1), requires_grad=True)
        ph = Tensor(np.zeros(1), requires_grad=True)
        params = {"rgb_encoder.w": pb, "crace2.w": ph}
        vel = {k: np.zeros(1) for k in params}
        pb.grad = np.ones(1)
        ph.grad = np.ones(1)
        sgd_step(params, vel, cfg)
        assert ph.data[0] / pb.data[0] == pytest.approx(10.0, rel=1e-12)

    def test_non_finite_gradient_aborts(self):
        cfg = TrainConfig(input_size=32)
        p = Tensor(np.zeros(1), requires_grad=True)
        p.grad = np.array([np.nan])
        with pytest.raises(DivergenceError):
            sgd_step({"x": p}, {"x": np.zeros(1)}, cfg)


class TestSchedule:
    def test_linear_warmup_then_decay(self):
        total, warm = 100, 10
        ramp = [lr_multiplier(s, total, warm) for s in range(warm)]
        assert ramp[0] == pytest.approx(0.1) and ramp[-1] == 1.0
        assert all(b > a for a, b in zip(ramp, ramp[1:]))
        tail = [lr_multiplier(s, total, warm) for s in range(warm, total)]
        assert all(b < a for a, b in zip(tail, tail[1:]))

    def test_default_warmup_is_five_percent(self):
        assert tiny_train_cfg(total_steps=500).warmup == 25

    def test_ratio_invariant(self):
        cfg = TrainConfig(input_size=32)
        assert cfg.lr_head / cfg.lr_backbone == pytest.approx(10.0)


class TestAugment:
    def test_flip_is_involution(self, dataset):
        s = dataset[0]
        img, gt, dep = flip_horizontal(*flip_horizontal(s.image, s.gt, s.depth))
        assert np.array_equal(img, s.image)
        assert np.array_equal(gt, s.gt)
        assert np.array_equal(dep, s.depth)

    def test_crop_never_grows_foreground(self, dataset):
        rng = np.random.default_rng(0)
        s = dataset[0]
        for _ in range(10):
            img, gt, dep = random_crop(s.image, s.gt, s.depth, rng)
            assert gt.sum() <= s.gt.sum()
            assert img.shape[1:] == gt.shape == dep.shape

    def test_augmented_gt_stays_binary(self, dataset):
        cfg = tiny_train_cfg()
        rng = np.random.default_rng(1)
        for _ in range(10):
            _, gt, _ = augment(dataset[0], cfg, rng, (32, 32))
            assert set(np.unique(gt)) <= {0.0, 1.0}

    def test_fixed_seed_reproduces(self, dataset):
        cfg = tiny_train_cfg()
        a = augment(dataset[0], cfg, np.random.default_rng(9), (32, 32))
        b = augment(dataset[0], cfg, np.random.default_rng(9), (32, 32))
        for x, y in zip(a, b):
            assert np.array_equal(x, y)

    def test_geometry_stays_aligned(self, dataset):
        cfg = tiny_train_cfg()
        img, gt, dep = augment(dataset[0], cfg, np.random.default_rng(3), (32, 32))
        assert img.shape == (3, 32, 32) and gt.shape == (32, 32) and dep.shape == (32, 32)

    def test_snap32(self):
        assert snap32(48) == 64 and snap32(64) == 64 and snap32(80) == 96
        assert snap32(16) == 32  # floor at the minimum encoder size


class TestTrainLoop:
    def test_loss_positive_at_init_and_logged(self, dataset, tmp_path):
        cfg = tiny_train_cfg()
        result = train(dataset, cfg, tiny_net_cfg(), out_dir=tmp_path / "run")
        assert len(result.log_rows) == cfg.total_steps
        assert all(row["L_total"] > 0 for row in result.log_rows)
        text = result.loss_log_path.read_text().splitlines()
        assert text[0].split("\t") == ["step", "lr", "L_total", "L_S", "L_E"]
        assert len(text) == cfg.total_steps + 1

    def test_rgbd_logs_depth_column(self, dataset, tmp_path):
        cfg = tiny_train_cfg(mode="rgbd")
        result = train(dataset, cfg, tiny_net_cfg("rgbd"), out_dir=tmp_path / "run")
        header = result.loss_log_path.read_text().splitlines()[0]
        assert header.split("\t")[-1] == "L_D"
        assert all("L_D" in row for row in result.log_rows)

    def test_deterministic_checkpoints(self, dataset, tmp_path):
        cfg = tiny_train_cfg()
        train(dataset, cfg, tiny_net_cfg(), out_dir=tmp_path / "a")
        train(dataset, cfg, tiny_net_cfg(), out_dir=tmp_path / "b")
        assert (tmp_path / "a/checkpoint.ckpt").read_bytes() == (
            tmp_path / "b/checkpoint.ckpt"
        ).read_bytes()

    def test_resume_is_bit_identical(self, dataset, tmp_path):
        # one uninterrupted run; then continue from its own mid-run
        # checkpoint in a fresh process-equivalent and compare the ends
        cfg = tiny_train_cfg(total_steps=6, checkpoint_interval=3)
        train(dataset, cfg, tiny_net_cfg(), out_dir=tmp_path / "full")
        resumed = train(
            dataset,
            tiny_train_cfg(total_steps=6, checkpoint_interval=3),
            tiny_net_cfg(),
            out_dir=tmp_path / "resumed",
            resume=tmp_path / "full/checkpoint_step000003.ckpt",
        )
        full_arrays = load_checkpoint(tmp_path / "full/checkpoint.ckpt")[1]
        res_arrays = load_checkpoint(tmp_path / "resumed/checkpoint.ckpt")[1]
        assert set(full_arrays) == set(res_arrays)
        for k in full_arrays:
            assert np.array_equal(full_arrays[k], res_arrays[k]), k

    def test_params_stay_finite(self, dataset):
        result = train(dataset, tiny_train_cfg(), tiny_net_cfg())
        for name, p in result.model.parameters():
            assert np.isfinite(p.data).all(), name

    def test_checkpoint_reload_predicts_identically(self, dataset, tmp_path):
        result = train(dataset, tiny_train_cfg(), tiny_net_cfg(), out_dir=tmp_path / "run")
        before = predict_maps(result.model, dataset[:2])
        model, *_ = build_model_from_checkpoint(tmp_path / "run/checkpoint.ckpt")
        after = predict_maps(model, dataset[:2])
        for a, b in zip(before, after):
            assert np.array_equal(a, b)

    def test_divergence_aborts_with_last_checkpoint(self, dataset, tmp_path):
        cfg = tiny_train_cfg(total_steps=20, checkpoint_interval=1,
                             lr_head=1e12, lr_backbone=1e11)
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(DivergenceError) as err:
                train(dataset, cfg, tiny_net_cfg(), out_dir=tmp_path / "run")
        assert err.value.last_checkpoint is not None
        assert err.value.last_checkpoint.exists()

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError):
            train([], tiny_train_cfg())

    def test_mode_mismatch_rejected(self, dataset):
        with pytest.raises(ValueError):
            train(dataset, tiny_train_cfg(mode="rgbd"), tiny_net_cfg("rgb"))


class TestEvalHelpers:
    def test_evaluate_model_report(self, dataset):
        result = train(dataset, tiny_train_cfg(), tiny_net_cfg())
        report = evaluate_model(result.model, dataset)
        vals = report.as_dict()
        assert set(vals) == {"maxF", "mF", "wF", "MAE", "Sm", "Em"}
        assert all(np.isfinite(v) for v in vals.values())


class TestAblationHarness:
    def test_all_rows_run_and_tabulate(self, dataset):
        cfg = tiny_train_cfg(total_steps=2, mode="rgbd")
        results = run_ablation(dataset, cfg, tiny_net_cfg("rgbd"))
        expected = [name for name, *_ in ABLATION_SCHEDULE]
        assert list(results) == expected
        table = format_ablation_table(results)
        lines = table.splitlines()
        assert len(lines) == len(expected) + 1
        for name in ("baseline", "w/o Depth", "w/o IoU", "full"):
            assert any(line.startswith(name) for line in lines)
        for report in results.values():
            assert all(np.isfinite(v) for v in report.as_dict().values())

    def test_rgb_mode_drops_depth_row(self, dataset):
        cfg = tiny_train_cfg(total_steps=2, mode="rgb")
        results = run_ablation(dataset, cfg, tiny_net_cfg("rgb"), rows=["baseline", "w/o Depth", "full"])
        assert list(results) == ["baseline", "full"]
