"""Image files, degradations, run configs, checkpoints, manifests, train/eval and the CLI."""

import csv
import math
import os

import numpy as np
import pytest

from echoir import tensor as T
from echoir.harness import cli
from echoir.harness.checkpoint import (
    MAGIC,
    CheckpointError,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    load_into,
)
from echoir.harness.config import RunConfig, load_config, parse_config
from echoir.harness.data import read_manifest, synthetic_split
from echoir.harness.degrade import DegradationSpec, box_blur, degrade, synthetic_image
from echoir.harness.imageio import ImageFormatError, decode_ppm, encode_ppm, load_image, save_image
from echoir.harness.train import (
    AdamW,
    ParameterVector,
    build_network,
    echoir_bilevel_binding,
    evaluate,
    train_asblo,
    train_sl,
)
from echoir.tensor import ConfigError, Tensor


def _small_cfg(tmp_path, **kw):
    base = dict(image_size=16, patch_size=16, train_images=2, val_images=2, test_images=2, steps=3,
                batch_size=1, checkpoint_every=2, output_dir=str(tmp_path / "run"))
    base.update(kw)
    return RunConfig(**base).validate()


class TestImageIO:
    def test_round_trip_quantisation(self, tmp_path):
        img = np.random.default_rng(0).random((3, 5, 7))
        save_image(tmp_path / "a.ppm", img)
        assert np.abs(load_image(tmp_path / "a.ppm") - img).max() <= 1 / 255

    def test_black_exact(self):
        img = np.zeros((3, 4, 4))
        np.testing.assert_array_equal(decode_ppm(encode_ppm(img)), img)

    def test_round_half_up(self):
        px = decode_ppm(encode_ppm(np.full((3, 1, 1), 0.5 / 255)))
        assert px[0, 0, 0] == 1 / 255

    def test_truncated_names_offset(self):
        buf = encode_ppm(np.zeros((3, 4, 4)))[:-5]
        with pytest.raises(ImageFormatError, match=r"byte offset \d+"):
            decode_ppm(buf)

    def test_bit_depth(self):
        with pytest.raises(ImageFormatError, match="bit depth"):
            decode_ppm(b"P6\n1 1\n65535\n" + b"\0" * 6)

    def test_png_round_trip(self, tmp_path):
        pytest.importorskip("PIL")
        img = np.random.default_rng(1).random((3, 4, 6))
        save_image(tmp_path / "a.png", img)
        assert np.abs(load_image(tmp_path / "a.png") - img).max() <= 1 / 255


class TestDegrade:
    def test_zero_noise_identity(self):
        img = synthetic_image(16, np.random.default_rng(0))
        np.testing.assert_array_equal(degrade(img, DegradationSpec(noise_std=0.0)), img)

    def test_blur_k1_identity(self):
        img = synthetic_image(16, np.random.default_rng(0))
        np.testing.assert_array_equal(box_blur(img, 1), img)

    def test_noise_statistics(self):
        gray = np.full((1, 64, 64), 0.5)
        noisy = degrade(gray, DegradationSpec(noise_std=25 / 255, seed=3))
        assert abs((noisy - gray).std() - 25 / 255) < 0.05 * 25 / 255

    @pytest.mark.parametrize("kind", ["gaussian_noise", "rain_streaks", "box_blur"])
    def test_seeded_reproducible(self, kind):
        img = synthetic_image(24, np.random.default_rng(1))
        a = degrade(img, DegradationSpec(kind=kind, seed=5, rain_density=0.01))
        b = degrade(img, DegradationSpec(kind=kind, seed=5, rain_density=0.01))
        assert np.array_equal(a, b) and a.min() >= 0 and a.max() <= 1

    def test_rain_brightens(self):
        img = np.full((3, 32, 32), 0.2)
        out = degrade(img, DegradationSpec(kind="rain_streaks", rain_density=0.01, seed=2))
        assert np.all(out >= img) and out.max() > 0.3

    def test_invalid(self):
        with pytest.raises(ValueError):
            DegradationSpec(kind="fog")


class TestConfig:
    def test_defaults_and_parse(self):
        cfg = parse_config("# comment\nsteps = 10\nchannel_attention = false\nlr=1e-3\n")
        assert (cfg.steps, cfg.channel_attention, cfg.lr, cfg.preset) == (10, False, 1e-3, "toy")

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown key 'stepz'"):
            parse_config("stepz = 3")

    def test_bad_choice(self):
        with pytest.raises(ConfigError):
            parse_config("optimizer = SGD")

    def test_dump_round_trip(self, tmp_path):
        cfg = RunConfig(steps=7, combine_mode="multiply")
        (tmp_path / "c.txt").write_text(cfg.dumps())
        assert load_config(tmp_path / "c.txt") == cfg


class TestCheckpoint:
    def test_round_trip_and_layout(self):
        params = {"a.w": np.arange(6.0).reshape(2, 3), "b": np.array([1.5])}
        buf = encode_checkpoint(params)
        assert buf[:8] == MAGIC
        out = decode_checkpoint(buf)
        assert list(out) == ["a.w", "b"]
        np.testing.assert_array_equal(out["a.w"], params["a.w"])
        # 8 magic + 8 header + (4 + 3 + 4 + 8 + 48) + (4 + 1 + 4 + 4 + 8)
        assert len(buf) == 16 + 67 + 21

    def test_truncated(self):
        with pytest.raises(CheckpointError, match="truncated"):
            decode_checkpoint(encode_checkpoint({"x": np.ones(3)})[:-4])

    def test_bad_magic(self):
        with pytest.raises(CheckpointError):
            decode_checkpoint(b"NOTACKPT" + bytes(8))

    def test_load_into_network(self):
        cfg = RunConfig()
        a, b = build_network(cfg), build_network(RunConfig(seed=1))
        load_into(b, decode_checkpoint(encode_checkpoint(a.named_parameters())))
        for (n, p), q in zip(a.named_parameters().items(), b.parameters()):
            assert np.array_equal(p.data, q.data), n


class TestData:
    def _write(self, tmp_path, rows):
        img = synthetic_image(16, np.random.default_rng(0))
        for name in {r[0] for r in rows} | {r[1] for r in rows}:
            save_image(tmp_path / name, img)
        with open(tmp_path / "m.csv", "w") as fh:
            fh.write("clean,degraded,split\n")
            for r in rows:
                fh.write(",".join(r) + "\n")
        return tmp_path / "m.csv"

    def test_manifest_reads(self, tmp_path):
        m = self._write(tmp_path, [("c1.ppm", "d1.ppm", "train"), ("c2.ppm", "d2.ppm", "val")])
        assert [e.split for e in read_manifest(m)] == ["train", "val"]

    def test_train_val_overlap_rejected(self, tmp_path):
        m = self._write(tmp_path, [("c1.ppm", "d1.ppm", "train"), ("c1.ppm", "d2.ppm", "val")])
        with pytest.raises(ConfigError, match="share"):
            read_manifest(m)

    def test_missing_file(self, tmp_path):
        (tmp_path / "m.csv").write_text("clean,degraded,split\nnope.ppm,nope2.ppm,train\n")
        with pytest.raises(FileNotFoundError):
            read_manifest(tmp_path / "m.csv")

    def test_synthetic_splits_differ_and_reproduce(self):
        cfg = RunConfig()
        tr, tr2, va = synthetic_split(cfg, "train"), synthetic_split(cfg, "train"), synthetic_split(cfg, "val")
        assert len(tr) == 16 and len(va) == 4
        assert all(np.array_equal(a.degraded, b.degraded) for a, b in zip(tr, tr2))
        assert not any(np.array_equal(a.clean, b.clean) for a in tr for b in va)


class TestTraining:
    def test_adamw_first_step(self):
        p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
        p.grad = np.array([0.5, -3.0])
        AdamW([p], lr=0.1, weight_decay=0.0).step()
        np.testing.assert_allclose(p.data, [0.9, -1.9], atol=1e-7)

    def test_sl_outputs(self, tmp_path):
        cfg = _small_cfg(tmp_path)
        res = train_sl(cfg)
        out = tmp_path / "run"
        assert sorted(os.listdir(out)) == ["checkpoint_000002.ckpt", "effective_config.txt", "final.ckpt", "loss.csv"]
        assert (out / "loss.csv").read_text().splitlines()[0] == "step,loss"
        assert len(res["losses"]) == 3
        assert load_config(out / "effective_config.txt") == cfg

    def test_eval_identical_pairs(self, tmp_path):
        cfg = _small_cfg(tmp_path, noise_std=0.0, precision="wide")
        net = build_network(cfg).zero_()
        res = evaluate(cfg, net=net)
        rows = list(csv.reader(open(tmp_path / "run" / "metrics.csv")))
        assert rows[0] == ["image", "psnr_degraded", "ssim_degraded", "psnr_restored", "ssim_restored"]
        assert rows[-1][0] == "mean" and rows[-1][3] == "inf"
        assert res["mean"]["ssim_restored"] == pytest.approx(1.0, abs=1e-12)

    def test_parameter_vector_round_trip(self):
        net = build_network(RunConfig(precision="wide"))
        vec = ParameterVector(net.upsampler_parameters())
        flat = vec.get()
        vec.set(flat * 2)
        np.testing.assert_array_equal(vec.get(), flat * 2)

    def test_binding_rejects_overlap(self, tmp_path):
        cfg = _small_cfg(tmp_path)
        net = build_network(cfg)
        tr = synthetic_split(cfg, "train")
        with pytest.raises(ConfigError):
            echoir_bilevel_binding(net, tr, tr)

    def test_binding_swap(self, tmp_path):
        cfg = _small_cfg(tmp_path)
        net = build_network(cfg)
        tr, va = synthetic_split(cfg, "train"), synthetic_split(cfg, "val")
        p, q = echoir_bilevel_binding(net, va, tr), echoir_bilevel_binding(net, va, tr, swap=True)
        assert p.beta.size == q.omega.size and p.omega.size == q.beta.size
        assert p.beta.size == sum(v.size for v in net.upsampler_parameters().values())

    def test_asblo_writes_trace(self, tmp_path):
        cfg = _small_cfg(tmp_path, optimizer="ASBLO", inner_steps=2, steps=2)
        res = train_asblo(cfg)
        assert len(res["trace"]) == 2
        assert (tmp_path / "run" / "trace.csv").exists()


class TestCLI:
    def test_gradcheck_ok(self, capsys):
        assert cli.main(["gradcheck"]) == 0
        out = capsys.readouterr().out
        for op in T.DIFFERENTIABLE_OPS:
            assert f"\n{op} " in out, op

    def test_gradcheck_corrupted_adjoint(self, monkeypatch, capsys):
        real = T.square

        def bad(a):
            return T._make("square", a.data * a.data, (a,), lambda g: (3.0 * g * a.data,))

        monkeypatch.setattr(T, "square", bad)
        assert cli.main(["gradcheck"]) == 1
        assert "FAIL" in capsys.readouterr().out
        monkeypatch.setattr(T, "square", real)

    def test_bilevel_demo(self, capsys, tmp_path):
        assert cli.main(["bilevel-demo", "--outer-steps", "300", "--out", str(tmp_path)]) == 0
        out = capsys.readouterr().out.splitlines()
        assert out[0].startswith("step,mu")
        assert sum(1 for l in out if l[:1].isdigit()) == 300
        assert len((tmp_path / "trace.csv").read_text().splitlines()) == 301

    def test_bilevel_demo_miss_is_exit_1(self, capsys):
        assert cli.main(["bilevel-demo", "--outer-steps", "3"]) == 1

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_bilevel_demo_divergence(self, capsys):
        assert cli.main(["bilevel-demo", "--outer-steps", "2", "--schedule-start", "5", "--inner-steps", "2000",
                         "--outer-lr", "1e300"]) == 2

    def test_degrade_and_upsample(self, tmp_path, capsys):
        img = synthetic_image(16, np.random.default_rng(0))
        save_image(tmp_path / "c.ppm", img)
        save_image(tmp_path / "s.ppm", img[:, ::2, ::2])
        assert cli.main(["degrade", str(tmp_path / "c.ppm"), str(tmp_path / "d.ppm"), "--seed", "4"]) == 0
        assert load_image(tmp_path / "d.ppm").shape == (3, 16, 16)
        assert cli.main(["upsample", str(tmp_path / "s.ppm"), str(tmp_path / "c.ppm"), str(tmp_path / "u.ppm")]) == 0
        assert load_image(tmp_path / "u.ppm").shape == (3, 16, 16)
        assert cli.main(["upsample", str(tmp_path / "c.ppm"), str(tmp_path / "c.ppm"), str(tmp_path / "x.ppm")]) == 3

    def test_contract_violations(self, tmp_path, capsys):
        (tmp_path / "bad.txt").write_text("colour = red\n")
        assert cli.main(["train", "--config", str(tmp_path / "bad.txt")]) == 3
        assert cli.main(["degrade", str(tmp_path / "none.ppm"), str(tmp_path / "o.ppm")]) == 3
        (tmp_path / "t.ppm").write_bytes(b"P6\n4 4\n255\n\0\0")
        assert cli.main(["degrade", str(tmp_path / "t.ppm"), str(tmp_path / "o.ppm")]) == 3

    def test_train_then_eval(self, tmp_path, capsys):
        cfg = _small_cfg(tmp_path)
        (tmp_path / "c.txt").write_text(cfg.dumps())
        out = tmp_path / "cli"
        assert cli.main(["--config", str(tmp_path / "c.txt"), "train", "--out", str(out)]) == 0
        assert cli.main(["eval", "--config", str(tmp_path / "c.txt"), "--out", str(out),
                         "--checkpoint", str(out / "final.ckpt")]) == 0
        assert (out / "metrics.csv").exists()
        assert cli.main(["eval", "--config", str(tmp_path / "c.txt"), "--checkpoint", str(tmp_path / "nope")]) == 3

    def test_precision_flag(self, tmp_path, capsys):
        cfg = _small_cfg(tmp_path, steps=1)
        (tmp_path / "c.txt").write_text(cfg.dumps())
        assert cli.main(["train", "--config", str(tmp_path / "c.txt"), "--precision", "wide"]) == 0
        ck = load_checkpoint(tmp_path / "run" / "final.ckpt")
        assert all(v.dtype == np.float64 for v in ck.values())
        assert "precision = wide" in (tmp_path / "run" / "effective_config.txt").read_text()
