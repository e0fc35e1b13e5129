"""Acceptance suite: one test per acceptance criterion, each printing a
[PASS] line (a pytest failure is the fail line). Criterion 9 runs the full
desk-scale experiment once per session; everything else is oracle-based.

Run with `pytest tests/test_acceptance.py -v -s`.
"""

import itertools
import json
import math
import time

import numpy as np
import pytest
import torch

from mccl.classifier import ce_loss
from mccl.config import default_config
from mccl.fusion import solve_beta
from mccl.intraview import LowPassResidualAttention
from mccl.metrics import EvalRecord, average_precision
from mccl.perturb import fgsm, pgd, sdn_detailed
from mccl.pipeline import ToySpec, load_corpus, load_manifest, run_experiment, synthesize_toy_corpus
from mccl.restorer import restoration_loss
from mccl.spectral import ButterworthFilter, SpectralProfile, azimuthal_profile, butterworth_lowpass, frequency_loss
from mccl.views import ViewKind, extract_view, make_mask_layout, mask_to_pixels

from conftest import TINY_E2E, random_image, smooth_image

EPS_8_255 = 8.0 / 255.0

# Desk-scale experiment settings: 64 px, ~2k images, CPU budget 30 min.
DESK_E2E = {
    "resolution": 64,
    "restorer.skip_blocks": 4,
    "restorer.base_channels": 16,
    "intraview.pyramid_channels": 32,
    "classifier.width": 32,
    "classifier.blocks": 6,
    "training.batch_size": 32,
    "training.stage1_epochs": 5,
    "training.stage2_epochs": 6,
    "baseline.epochs": 8,
    "toy.n_real": 1000,
    "toy.n_fake": 1000,
    "toy.train_fraction": 0.7,
    "toy.artifact": "spectral_bump",
    "toy.amplitude": 0.1,
}

E2E_BUDGET_SECONDS = 1800.0


@pytest.fixture(scope="session")
def desk_experiment(tmp_path_factory):
    workdir = tmp_path_factory.mktemp("acceptance_e2e")
    overrides = dict(DESK_E2E)
    overrides["paths.workdir"] = str(workdir)
    cfg = default_config(**overrides)
    t0 = time.time()
    report = run_experiment(cfg, log=lambda *_: None)
    elapsed = time.time() - t0
    return report, elapsed


def _simplex_grid(step=1e-3):
    ticks = np.round(np.arange(0.0, 1.0 + step / 2, step), 9)
    b1, b2 = np.meshgrid(ticks, ticks, indexing="ij")
    keep = b1 + b2 <= 1.0 + 1e-12
    b1, b2 = b1[keep], b2[keep]
    b3 = np.maximum(1.0 - b1 - b2, 0.0)
    return np.stack([b1, b2, b3], axis=1)


def test_criterion_1_closed_form_fusion_oracle():
    """solve_beta vs brute-force simplex grid search + KKT identity."""
    t0 = time.time()
    rng = np.random.default_rng(2024)
    grid = _simplex_grid(1e-3)
    taus = [1.5, 2.0, 4.0, 8.0]
    worst_beta_gap = 0.0
    for i in range(100):
        losses = rng.uniform(1e-3, 10.0, size=3)
        tau = taus[i % 4]
        beta = solve_beta(losses, tau)

        obj = grid**tau @ losses
        k = int(np.argmin(obj))
        grid_obj = float(obj[k])
        closed_obj = float(np.sum(beta**tau * losses))

        # the grid can never beat the exact minimizer ...
        assert grid_obj + 1e-12 >= closed_obj
        # ... and must be at least as good as the closed form snapped to the lattice
        snapped12 = np.round(beta[:2], 3)
        snapped = np.array([snapped12[0], snapped12[1], max(0.0, 1.0 - snapped12.sum())])
        assert grid_obj <= float(np.sum(snapped**tau * losses)) + 1e-15
        worst_beta_gap = max(worst_beta_gap, float(np.abs(grid[k] - beta).max()))

        kkt = tau * beta ** (tau - 1) * losses
        assert np.all(np.abs(kkt - kkt.mean()) <= 1e-9 * kkt.mean())
    elapsed = time.time() - t0
    assert elapsed < 60.0
    assert worst_beta_gap < 0.05  # gross-error catch; objective envelope is the rigorous check
    print(f"\n[PASS] criterion 1: closed-form beta matches grid search "
          f"(100 vectors, max |beta_grid - beta_closed| = {worst_beta_gap:.2e}, {elapsed:.1f}s)")


def test_criterion_2_parseval():
    """frequency_loss equals pixel squared-L2 within 1e-6 relative error."""
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(50):
        x = random_image(rng, 24)
        y = random_image(rng, 24)
        lhs = float(frequency_loss(x, y))
        rhs = float(((x - y) ** 2).sum())
        worst = max(worst, abs(lhs - rhs) / rhs)
    assert worst < 1e-6
    print(f"\n[PASS] criterion 2: Parseval identity on 50 random pairs (worst rel err {worst:.2e})")


def _rel_err(analytic, numeric):
    scale = max(abs(analytic), abs(numeric), 1e-8)
    return abs(analytic - numeric) / scale


def test_criterion_3_gradient_checks():
    """Analytic gradients match central finite differences (double precision)."""
    rng = np.random.default_rng(11)
    worst = {"restoration_loss": 0.0, "ce_loss": 0.0, "residual_attention": 0.0}

    for _ in range(10):
        x = random_image(rng, 8)
        y = random_image(rng, 8).requires_grad_(True)
        restoration_loss(x, y, 10.0).backward()
        eps = 1e-6
        for _ in range(3):
            idx = tuple(rng.integers(d) for d in y.shape)
            yp, ym = y.detach().clone(), y.detach().clone()
            yp[idx] += eps
            ym[idx] -= eps
            num = (float(restoration_loss(x, yp, 10.0)) - float(restoration_loss(x, ym, 10.0))) / (2 * eps)
            worst["restoration_loss"] = max(worst["restoration_loss"], _rel_err(float(y.grad[idx]), num))

    for _ in range(10):
        pv = float(rng.uniform(0.05, 0.95))
        yv = float(rng.integers(2))
        p = torch.tensor(pv, dtype=torch.float64, requires_grad=True)
        ce_loss(p, torch.tensor(yv, dtype=torch.float64)).backward()
        eps = 1e-7
        num = (
            float(ce_loss(torch.tensor(pv + eps, dtype=torch.float64), torch.tensor(yv)))
            - float(ce_loss(torch.tensor(pv - eps, dtype=torch.float64), torch.tensor(yv)))
        ) / (2 * eps)
        worst["ce_loss"] = max(worst["ce_loss"], _rel_err(float(p.grad), num))

    for trial in range(10):
        torch.manual_seed(trial)
        mod = LowPassResidualAttention(6, 3, ButterworthFilter(0.1)).to(torch.float64)
        x = random_image(rng, 8)
        xt = random_image(rng, 8).requires_grad_(True)
        feat = torch.from_numpy(rng.random((6, 8, 8))).requires_grad_(True)
        head = torch.from_numpy(rng.random((3, 8, 8)))
        (mod(x, xt, feat) * head).sum().backward()
        eps = 1e-6
        for tensor, grad in ((xt, xt.grad), (feat, feat.grad)):
            idx = tuple(rng.integers(d) for d in tensor.shape)
            tp, tm = tensor.detach().clone(), tensor.detach().clone()
            tp[idx] += eps
            tm[idx] -= eps
            if tensor is xt:
                fp = float((mod(x, tp, feat.detach()) * head).sum())
                fm = float((mod(x, tm, feat.detach()) * head).sum())
            else:
                fp = float((mod(x, xt.detach(), tp) * head).sum())
                fm = float((mod(x, xt.detach(), tm) * head).sum())
            num = (fp - fm) / (2 * eps)
            worst["residual_attention"] = max(worst["residual_attention"], _rel_err(float(grad[idx]), num))

    for name, err in worst.items():
        assert err < 1e-4, f"{name}: worst rel err {err}"
    print("\n[PASS] criterion 3: gradient checks "
          + ", ".join(f"{k}={v:.2e}" for k, v in worst.items()))


def test_criterion_4_butterworth_analytics():
    """Gain 0.5 at the cutoff; Nyquist pattern attenuated by 1/(1+(0.5/d0)^2)."""
    for d0 in (0.05, 0.1, 0.25, 0.5):
        assert abs(ButterworthFilter(d0).gain(d0) - 0.5) <= 1e-6

    n, d0, amp = 64, 0.1, 0.2
    rows = torch.arange(n, dtype=torch.float64)
    pattern = ((-1.0) ** rows)[:, None] * torch.ones(1, n, dtype=torch.float64)
    x = (0.5 + amp * pattern).unsqueeze(0)
    out = butterworth_lowpass(x, ButterworthFilter(d0))
    measured = float((out - 0.5).abs().max()) / amp
    expected = 1.0 / (1.0 + (0.5 / d0) ** 2)
    assert abs(measured - expected) / expected < 0.02
    print(f"\n[PASS] criterion 4: Butterworth gain(d0)=0.5 and Nyquist attenuation "
          f"{measured:.6f} vs analytic {expected:.6f}")


def test_criterion_5_masking_contract():
    """1000 layouts at 128 px: exact patch count, disjoint tiling, untouched pixels."""
    img = torch.rand(3, 128, 128)
    for seed in range(1000):
        layout = make_mask_layout(128, 128, 0.5, seed=seed)
        assert int(layout.grid.sum()) == 128
        pixels = mask_to_pixels(layout)
        assert float(pixels.sum()) == 128 * 8 * 8  # disjoint patches cover exactly their area
        view = extract_view(img, ViewKind.MASKED, layout=layout)
        keep = ~pixels.bool().expand(3, -1, -1)
        assert torch.equal(view.data[keep], img[keep])
    print("\n[PASS] criterion 5: masking contract held on 1000 random layouts at 128 px")


def test_criterion_6_attack_contracts():
    """l-inf bound holds exactly per sample; single-step PGD equals FGSM bitwise."""
    import torch.nn as nn

    class Surrogate(nn.Module):
        def __init__(self):
            super().__init__()
            torch.manual_seed(5)
            self.conv = nn.Conv2d(3, 8, 3, padding=1)

        def forward(self, x):
            return self.conv(x).mean(dim=(1, 2, 3))

    rng = np.random.default_rng(21)
    surrogate = Surrogate()
    x = torch.stack([smooth_image(rng, 32) for _ in range(32)])
    y = torch.tensor([0.0, 1.0] * 16)

    adv_f = fgsm(x, y, surrogate, eps=EPS_8_255)
    assert bool(((adv_f - x).abs() <= EPS_8_255).all())
    adv_p = pgd(x, y, surrogate, eps=EPS_8_255, steps=10, step_size=EPS_8_255 / 4)
    assert bool(((adv_p - x).abs() <= EPS_8_255).all())
    adv_p1 = pgd(x, y, surrogate, eps=EPS_8_255, steps=1, step_size=EPS_8_255)
    assert torch.equal(adv_p1, adv_f)
    print(f"\n[PASS] criterion 6: FGSM/PGD l-inf bound <= 8/255 exact on every sample; "
          f"PGD(1, eps) == FGSM bitwise")


def test_criterion_7_sdn_contract(tmp_path):
    """Post-attack azimuthal profile matches the real reference curve."""
    spec = ToySpec(resolution=64, n_real=24, n_fake=24, artifact="spectral_bump", amplitude=0.1, seed=3)
    corpus = load_corpus(load_manifest(synthesize_toy_corpus(spec, tmp_path / "sdn").root / "manifest.csv"))
    reals = [it.image for it in corpus.reals()]
    ref_power = np.mean([azimuthal_profile(i).power for i in reals], axis=0)
    reference = SpectralProfile(np.arange(ref_power.size), ref_power)

    errors, clamped = [], 0
    for item in corpus.fakes():
        attacked, stats = sdn_detailed(item.image, reference)
        if stats.clamp_affected:
            clamped += 1
            continue
        prof = azimuthal_profile(attacked)
        errors.append(np.abs(
            np.log(np.maximum(prof.power, 1e-12)) - np.log(np.maximum(ref_power, 1e-12))
        ).mean())
    assert errors, "every SDN image was clamp-affected; cannot evaluate the contract"
    assert float(np.mean(errors)) < 0.05
    print(f"\n[PASS] criterion 7: SDN profile match, mean log-power error "
          f"{np.mean(errors):.4f} over {len(errors)} images ({clamped} clamp-affected excluded)")


def test_criterion_8_metrics_oracle():
    """AP fixture equals the hand-computed 80.56; exhaustive fixtures match
    the brute-force positive-rank average."""
    fixture = [EvalRecord(p, y) for p, y in zip([0.9, 0.8, 0.7, 0.6], [1, 0, 1, 1])]
    ap = average_precision(fixture)
    assert abs(ap - 80.56) <= 0.01

    rng = np.random.default_rng(31)
    checked = 0
    for n in range(2, 11):
        scores = rng.permutation(n) / n + 0.01
        for labels in itertools.product([0, 1], repeat=n):
            if len(set(labels)) < 2:
                continue
            got = average_precision([EvalRecord(p, y) for p, y in zip(scores, labels)])
            order = np.argsort(-scores)
            ordered = np.asarray(labels)[order]
            precisions = []
            tp = 0
            for rank, lab in enumerate(ordered, start=1):
                if lab == 1:
                    tp += 1
                    precisions.append(tp / rank)
            want = 100.0 * float(np.mean(precisions))
            assert got == pytest.approx(want, abs=1e-9)
            checked += 1
    print(f"\n[PASS] criterion 8: AP fixture = {ap:.4f} (~80.56); "
          f"{checked} exhaustive fixtures match the positive-rank oracle")


def test_criterion_9a_clean_accuracy(desk_experiment):
    report, elapsed = desk_experiment
    clean_acc = report.rows["clean"].acc
    assert elapsed < E2E_BUDGET_SECONDS, f"experiment took {elapsed:.0f}s (budget {E2E_BUDGET_SECONDS:.0f}s)"
    assert clean_acc >= 95.0
    print(f"\n[PASS] criterion 9a: held-out clean accuracy {clean_acc:.2f}% >= 95% "
          f"(experiment wall time {elapsed:.0f}s)")


def test_criterion_9b_spectral_alignment(desk_experiment):
    report, _ = desk_experiment
    align = report.extras["spectral_alignment"]
    assert align["gap_after_edge_completion"] < align["gap_before"]
    print(f"\n[PASS] criterion 9b: spectral gap {align['gap_before']:.4f} -> "
          f"{align['gap_after_edge_completion']:.4f} after edge-to-image completion")


def test_criterion_9c_sdn_robustness_ordering(desk_experiment):
    report, _ = desk_experiment
    mccl_acc = report.rows["sdn"].acc
    base_acc = report.baseline_rows["sdn"].acc
    assert mccl_acc >= base_acc + 10.0
    print(f"\n[PASS] criterion 9c: SDN robustness, detector {mccl_acc:.2f}% vs "
          f"raw-pixel baseline {base_acc:.2f}% (gap {mccl_acc - base_acc:.2f} >= 10)")


def test_criterion_10_determinism(tmp_path):
    """Identical config+seed produce identical reports (exact kernels on)."""
    reports = []
    for name in ("t1", "t2"):
        overrides = dict(TINY_E2E)
        overrides["paths.workdir"] = str(tmp_path / name)
        reports.append(run_experiment(default_config(**overrides), log=lambda *_: None))
    a = json.dumps(reports[0].to_dict(), sort_keys=True)
    b = json.dumps(reports[1].to_dict(), sort_keys=True)
    assert a == b
    print("\n[PASS] criterion 10: two identical-config runs produced byte-identical reports")
