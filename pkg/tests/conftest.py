import numpy as np
import pytest
import torch

from mccl.data import Corpus, CorpusItem, LABEL_FAKE, LABEL_REAL


@pytest.fixture(autouse=True)
def _seed_torch():
    torch.manual_seed(0)


# Desk-size settings for integration tests: small but end-to-end complete.
TINY_E2E = {
    "resolution": 32,
    "restorer.skip_blocks": 3,
    "restorer.base_channels": 8,
    "restorer.augment": False,
    "intraview.pyramid_channels": 8,
    "classifier.width": 8,
    "classifier.blocks": 3,
    "training.batch_size": 8,
    "training.stage1_epochs": 2,
    "training.stage2_epochs": 2,
    "baseline.epochs": 2,
    "toy.n_real": 20,
    "toy.n_fake": 20,
    "toy.train_fraction": 0.6,
    "toy.amplitude": 0.15,
    "perturb.pgd_steps": 3,
}


@pytest.fixture(scope="session")
def tiny_experiment(tmp_path_factory):
    """One complete (tiny) experiment shared by integration tests."""
    from mccl.config import default_config
    from mccl.pipeline import run_experiment

    workdir = tmp_path_factory.mktemp("tiny_experiment")
    overrides = dict(TINY_E2E)
    overrides["paths.workdir"] = str(workdir)
    cfg = default_config(**overrides)
    report = run_experiment(cfg, log=lambda *_: None)
    return cfg, workdir, report


def random_image(rng, size=32, channels=3, dtype=torch.float64):
    arr = rng.random((channels, size, size))
    return torch.from_numpy(arr).to(dtype)


def smooth_image(rng, size=32, dtype=torch.float32):
    """Band-limited random field in [0, 1]; cheap stand-in for a natural image."""
    fy = np.fft.fftfreq(size)
    fx = np.fft.fftfreq(size)
    d = np.sqrt(fy[:, None] ** 2 + fx[None, :] ** 2)
    amp = 1.0 / (d + 1.0 / size) ** 1.8
    chans = []
    for _ in range(3):
        spec = np.fft.fft2(rng.normal(size=(size, size))) * amp
        chans.append(np.real(np.fft.ifft2(spec)))
    field = np.stack(chans)
    field = (field - field.min()) / (field.max() - field.min())
    return torch.from_numpy(field).to(dtype)


def tiny_corpus(rng, n_real=8, n_fake=8, size=32, artifact_amp=0.15):
    """Small labeled corpus; fakes carry a fixed high-frequency lattice."""
    yy, xx = np.indices((size, size))
    pattern = np.cos(2 * np.pi * (0.3 * size) * xx / size) + np.cos(2 * np.pi * (0.3 * size) * yy / size)
    pattern = torch.from_numpy(pattern / np.abs(pattern).max() * artifact_amp).float()
    items = []
    for i in range(n_real):
        img = smooth_image(rng, size) * (1 - 2 * artifact_amp) + artifact_amp
        items.append(CorpusItem(img, LABEL_REAL, "toy_real", f"real_{i}"))
    for i in range(n_fake):
        img = smooth_image(rng, size) * (1 - 2 * artifact_amp) + artifact_amp
        items.append(CorpusItem((img + pattern).clamp(0, 1), LABEL_FAKE, "toy_fake", f"fake_{i}"))
    return Corpus(items)
