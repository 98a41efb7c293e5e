import math

import numpy as np
import pytest

import penet


def test_kl_closed_form():
    assert penet.kl_divergence(np.array([[1.0, 0.0]]), np.zeros((1, 2))) == pytest.approx(0.5, abs=1e-9)


def test_fid_of_shifted_gaussians():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((4000, 2))
    assert penet.fid(a, a) == pytest.approx(0.0, abs=1e-6)
    assert penet.fid(a, a + 1.0) == pytest.approx(2.0, rel=1e-6)


def test_heatmap_peak_and_falloff():
    kp = np.full((penet.JOINT_COUNT, 2), 20.0, dtype=np.float32)
    hm = penet.render_heatmaps(kp, 40, tau=6.0)
    assert hm.shape == (penet.JOINT_COUNT, 40, 40)
    assert hm[0, 20, 20] == pytest.approx(1.0)
    assert hm[0, 20, 26] == pytest.approx(math.exp(-0.5))


def test_image_metrics():
    rng = np.random.default_rng(1)
    img = rng.random((32, 32, 3), dtype=np.float32)
    assert penet.ssim(img, img) == pytest.approx(1.0)
    assert penet.psnr(img, img) == pytest.approx(100.0)
    noisy = np.clip(img + 0.1, 0, 1).astype(np.float32)
    assert penet.psnr(img, noisy) < 30


def test_compose_priority():
    shape = (8, 8, 3)
    head, hand, torso = (np.full(shape, v, dtype=np.float32) for v in (0.2, 0.5, 0.8))
    ones = np.ones((8, 8), dtype=np.float32)
    out = penet.compose(head, hand, torso, ones, ones, ones)
    assert np.all(out == np.float32(0.5))


def test_bad_keypoints_raise():
    with pytest.raises(ValueError):
        penet.render_heatmaps(np.zeros((3, 3), dtype=np.float32), 16)


def test_corpus_train_and_cli(tmp_path):
    corpus_dir = tmp_path / "corpus"
    assert penet.generate_corpus(str(corpus_dir), signers=2, frames=2, image_size=32, seed=3) == 4
    corpus = penet.Corpus(str(corpus_dir))
    assert len(corpus) == 4
    assert corpus.image(0).shape == (32, 32, 3)
    assert corpus.keypoints(0).shape == (penet.JOINT_COUNT, 2)
    assert set(corpus.masks(0)) == {"head", "hand", "torso"}

    cfg = penet.TrainConfig()
    for key, value in {
        "corpus": str(corpus_dir), "image_size": "32", "batch_size": "2", "steps": "2", "levels": "4",
        "base_channels": "8", "max_channels": "16", "latent_dim": "8", "style_dim": "16",
        "d_base_channels": "8", "classifier_steps": "10", "seed": "5",
    }.items():
        cfg.set(key, value)
    assert penet.TrainConfig.parse(cfg.serialize()).hash() == cfg.hash()

    trainer = penet.Trainer(cfg)
    trainer.train()
    assert trainer.step_count == 2
    assert len(trainer.history) == 2
    assert all(math.isfinite(h["total"]) for h in trainer.history)
    recon = trainer.reconstruct([0, 1])
    assert len(recon) == 2 and recon[0].shape == (32, 32, 3)
    assert 0.0 <= recon[0].min() and recon[0].max() <= 1.0

    ckpt = tmp_path / "model.penet"
    trainer.save(str(ckpt))
    other = penet.Trainer(cfg)
    other.load(str(ckpt))
    assert other.step_count == 2

    code, out, _ = penet.run_cli(["--help"])
    assert code == 0 and "gen-data" in out
    code, _, err = penet.run_cli(["--json-errors", "train"])
    assert code == 2 and '"exit_code"' in err
