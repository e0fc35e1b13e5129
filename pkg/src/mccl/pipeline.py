"""Corpus ingestion, toy-data synthesis, and the end-to-end experiment
orchestrator that wires training, attacks and evaluation together.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image as PILImage

from . import perturb as P
from .classifier import ClassifierConfig, SmallCNN
from .config import PipelineConfig, load_config
from .data import LABEL_NAMES, Corpus, CorpusItem
from .errors import DataError
from .imgio import load_image, rng_for, save_png
from .metrics import MetricsReport, build_matrix, records_for_corpus, summarize
from .restorer import complete
from .spectral import SpectralProfile, azimuthal_profile, profile_gap
from .training import (
    Bundle,
    OptimSchedule,
    baseline_scores,
    enable_determinism,
    train_baseline,
    train_stage1,
    train_stage2,
)
from .views import ViewKind, extract_view

MANIFEST_HEADER = "path,label,source_tag"
ARTIFACT_KINDS = ("grid", "checkerboard_residual", "spectral_bump")


@dataclass
class ManifestEntry:
    path: str  # relative to the manifest's directory
    label: str  # "real" | "fake"
    source_tag: str


@dataclass
class DatasetManifest:
    root: Path
    entries: list[ManifestEntry]
    digest: str

    def __len__(self):
        return len(self.entries)


def _digest_entries(root: Path, entries: list[ManifestEntry]) -> str:
    h = hashlib.sha256()
    for e in entries:
        h.update(f"{e.path},{e.label},{e.source_tag}\n".encode())
        h.update((root / e.path).read_bytes())
    return h.hexdigest()


def write_manifest(entries: list[ManifestEntry], path: str | Path) -> None:
    path = Path(path)
    lines = [MANIFEST_HEADER] + [f"{e.path},{e.label},{e.source_tag}" for e in entries]
    path.write_text("\n".join(lines) + "\n")


def load_manifest(path: str | Path) -> DatasetManifest:
    """Parse and validate a corpus manifest (CSV: path,label,source_tag).

    Every referenced file must exist and decode as an image; bad rows are
    collected and reported together with their line numbers.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    root = path.parent
    lines = path.read_text().splitlines()
    if not lines or lines[0].strip() != MANIFEST_HEADER:
        raise DataError(f"{path}: first line must be the header '{MANIFEST_HEADER}'")

    entries, problems = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 3:
            problems.append(f"line {lineno}: expected 3 fields, got {len(parts)}")
            continue
        rel, label, tag = (p.strip() for p in parts)
        if label not in LABEL_NAMES:
            problems.append(f"line {lineno}: invalid label {label!r} (must be real|fake)")
            continue
        full = root / rel
        if not full.exists():
            problems.append(f"line {lineno}: missing file {rel}")
            continue
        try:
            with PILImage.open(full) as im:
                im.verify()
        except Exception as exc:
            problems.append(f"line {lineno}: undecodable image {rel}: {exc}")
            continue
        entries.append(ManifestEntry(rel, label, tag))
    if problems:
        raise DataError(f"{path}: " + "; ".join(problems))
    return DatasetManifest(root, entries, _digest_entries(root, entries))


def load_corpus(manifest: DatasetManifest, resolution: int | None = None) -> Corpus:
    items = []
    for e in manifest.entries:
        img = load_image(manifest.root / e.path, resolution=resolution)
        items.append(CorpusItem(img, LABEL_NAMES[e.label], e.source_tag, str(manifest.root / e.path)))
    corpus = Corpus(items)
    corpus.validate_labels()
    return corpus


@dataclass
class ToySpec:
    """Synthetic desk-scale corpus: smooth random fields for the real class,
    the same kind of fields plus one frequency-localized artifact for fakes."""

    resolution: int = 64
    n_real: int = 1000
    n_fake: int = 1000
    artifact: str = "spectral_bump"
    amplitude: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.artifact not in ARTIFACT_KINDS:
            raise DataError(f"unknown artifact kind {self.artifact!r}; choose from {ARTIFACT_KINDS}")
        if not (0.0 <= self.amplitude <= 0.3):
            raise DataError(
                f"artifact amplitude {self.amplitude} would push pixels out of [0,1]; use [0, 0.3]"
            )


# The real class: smooth random fields with a 1/f-style radial spectrum, a
# shared luminance structure and weaker per-channel chroma.
FIELD_ALPHA = 1.8
CHROMA_WEIGHT = 0.3
BUMP_RADIUS_FRAC = 0.3  # artifact ring radius in cycles/sample (Nyquist = 0.5)
GRID_PERIOD = 8


def _smooth_field(rng: np.random.Generator, n: int) -> np.ndarray:
    fy = np.fft.fftfreq(n)
    fx = np.fft.fftfreq(n)
    d = np.sqrt(fy[:, None] ** 2 + fx[None, :] ** 2)
    amp = 1.0 / (d + 1.0 / n) ** FIELD_ALPHA

    def one():
        spec = np.fft.fft2(rng.normal(size=(n, n))) * amp
        return np.real(np.fft.ifft2(spec))

    shared = one()
    chans = np.stack([shared + CHROMA_WEIGHT * one() for _ in range(3)])
    lo, hi = chans.min(), chans.max()
    return (chans - lo) / (hi - lo)  # full [0, 1] span before margin scaling


def _artifact_pattern(kind: str, n: int, seed: int) -> np.ndarray:
    """Deterministic unit-amplitude artifact shared by every fake image (a
    consistent generator fingerprint), max |value| = 1."""
    yy, xx = np.indices((n, n))
    if kind == "checkerboard_residual":
        pattern = ((-1.0) ** (yy + xx)).astype(np.float64)
    elif kind == "grid":
        g = ((yy % GRID_PERIOD == 0) | (xx % GRID_PERIOD == 0)).astype(np.float64)
        pattern = g - g.mean()
    else:  # spectral_bump: coherent lattice on one Fourier ring
        rng = rng_for(seed, "toy-artifact-phase")
        radius = BUMP_RADIUS_FRAC * n
        pattern = np.zeros((n, n))
        for theta in np.linspace(0.0, np.pi, 6, endpoint=False):
            ky = int(np.rint(radius * np.sin(theta)))
            kx = int(np.rint(radius * np.cos(theta)))
            phase = rng.uniform(0, 2 * np.pi)
            pattern += np.cos(2 * np.pi * (ky * yy + kx * xx) / n + phase)
    return pattern / np.abs(pattern).max()


def synthesize_toy_corpus(spec: ToySpec, out_dir: str | Path) -> DatasetManifest:
    """Write a labeled PNG corpus plus its manifest; byte-identical for a
    fixed spec. Base fields are squeezed into [amplitude, 1 - amplitude] so
    adding the artifact can never leave [0, 1]."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n = spec.resolution
    margin = spec.amplitude
    pattern = _artifact_pattern(spec.artifact, n, spec.seed) * spec.amplitude

    entries = []
    for label, count, tag in (("real", spec.n_real, "toy_real"), ("fake", spec.n_fake, "toy_fake")):
        for i in range(count):
            rng = rng_for(spec.seed, f"toy-{label}", i)
            field = _smooth_field(rng, n) * (1.0 - 2.0 * margin) + margin
            if label == "fake":
                field = field + pattern
            if field.min() < -1e-9 or field.max() > 1 + 1e-9:
                raise DataError("toy synthesis produced out-of-range pixels; lower the amplitude")
            name = f"{label}_{i:05d}.png"
            save_png(torch.from_numpy(field.astype(np.float32)), out / name)
            entries.append(ManifestEntry(name, label, tag))
    write_manifest(entries, out / "manifest.csv")
    return DatasetManifest(out, entries, _digest_entries(out, entries))


def split_corpus(corpus: Corpus, train_fraction: float) -> tuple[Corpus, Corpus]:
    """Deterministic per-class split: the leading fraction of each class (in
    manifest order) trains, the remainder tests."""
    train, test = [], []
    for subset in (corpus.reals(), corpus.fakes()):
        k = int(round(train_fraction * len(subset)))
        train.extend(subset.items[:k])
        test.extend(subset.items[k:])
    return Corpus(train), Corpus(test)


def mean_profile(corpus_images, tag: str = "") -> SpectralProfile:
    """Average azimuthal power profile over a set of images (linear power)."""
    profiles = [azimuthal_profile(img) for img in corpus_images]
    power = np.mean([p.power for p in profiles], axis=0)
    return SpectralProfile(profiles[0].radii, power, corpus_tag=tag)


def run_experiment(config: PipelineConfig | str | Path, *, log=print) -> MetricsReport:
    """Full desk-scale protocol: synthesize (or reuse) the toy corpus, train
    both stages, train the raw-pixel baseline, generate the perturbation
    corpora, and evaluate everything into one report.

    Stages resume from checkpoints under paths.workdir; rerunning with the
    same config and seed reproduces the identical report.
    """
    cfg = config if isinstance(config, PipelineConfig) else load_config(config)
    enable_determinism(cfg.seed)
    workdir = Path(cfg["paths.workdir"])
    corpus_dir = workdir / "corpus"
    bundle_dir = workdir / "bundle"
    ckpt_dir = workdir / "checkpoints"
    workdir.mkdir(parents=True, exist_ok=True)

    # --- data ---------------------------------------------------------
    manifest_path = corpus_dir / "manifest.csv"
    toy = ToySpec(
        resolution=cfg.resolution,
        n_real=int(cfg["toy.n_real"]),
        n_fake=int(cfg["toy.n_fake"]),
        artifact=str(cfg["toy.artifact"]),
        amplitude=float(cfg["toy.amplitude"]),
        seed=cfg.seed,
    )
    if manifest_path.exists():
        manifest = load_manifest(manifest_path)
        log(f"[data] reusing corpus at {corpus_dir} ({len(manifest)} entries)")
    else:
        manifest = synthesize_toy_corpus(toy, corpus_dir)
        log(f"[data] synthesized corpus at {corpus_dir} ({len(manifest)} entries)")
    corpus = load_corpus(manifest, resolution=cfg.resolution)
    train_set, test_set = split_corpus(corpus, float(cfg["toy.train_fraction"]))
    log(f"[data] train={len(train_set)} test={len(test_set)}")

    # Guard against mid-run dataset mutation.
    digest_now = _digest_entries(manifest.root, manifest.entries)
    if digest_now != manifest.digest:
        raise DataError("dataset changed on disk while the run was in progress")

    # --- stage 1: restorers -------------------------------------------
    s1_sched = OptimSchedule(
        lr=float(cfg["training.lr"]),
        lr_halving_period=int(cfg["training.lr_halving_period"]),
        batch_size=int(cfg["training.batch_size"]),
        epochs=int(cfg["training.stage1_epochs"]),
        seed=cfg.seed,
    )
    restorers = train_stage1(train_set.reals(), list(ViewKind), cfg, s1_sched, checkpoint_dir=ckpt_dir, log=log)

    # --- stage 2: heads + fusion --------------------------------------
    s2_sched = OptimSchedule(
        lr=float(cfg["training.lr"]),
        lr_halving_period=int(cfg["training.lr_halving_period"]),
        batch_size=int(cfg["training.batch_size"]),
        epochs=int(cfg["training.stage2_epochs"]),
        seed=cfg.seed,
    )
    heads, fusion, history = train_stage2(train_set, restorers, cfg, s2_sched, checkpoint_dir=ckpt_dir, log=log)
    bundle = Bundle(restorers, heads, fusion, cfg, beta_history=history["beta"], loss_history=history)
    bundle.save(bundle_dir)

    # --- baseline / surrogate ------------------------------------------
    baseline_path = workdir / "baseline.pt"
    b_sched = OptimSchedule(
        lr=float(cfg["training.lr"]),
        lr_halving_period=int(cfg["training.lr_halving_period"]),
        batch_size=int(cfg["training.batch_size"]),
        epochs=int(cfg["baseline.epochs"]),
        seed=cfg.seed,
    )
    if baseline_path.exists():
        payload = torch.load(baseline_path, weights_only=False)
        baseline = SmallCNN(ClassifierConfig(**payload["config"]))
        baseline.load_state_dict(payload["state"])
        baseline.eval()
        log("[baseline] reusing checkpoint")
    else:
        baseline = train_baseline(train_set, cfg, b_sched, log=log)
        torch.save(
            {"version": 1, "config": asdict(baseline.config), "state": baseline.state_dict()},
            baseline_path,
        )

    # --- perturbed test corpora ----------------------------------------
    sdn_reference = mean_profile([it.image for it in train_set.reals()], tag="toy_real")
    eps = float(cfg["perturb.epsilon"])
    pgd_steps = int(cfg["perturb.pgd_steps"])
    pgd_step = eps * float(cfg["perturb.pgd_step_fraction"])
    grids = {
        P.PerturbKind.BLUR: {"sigma": list(cfg["perturb.blur_sigmas"])},
        P.PerturbKind.CROP: {"fraction": list(cfg["perturb.crop_fractions"])},
        P.PerturbKind.COMPRESSION: {"quality": list(cfg["perturb.jpeg_qualities"])},
        P.PerturbKind.NOISE: {"sigma": list(cfg["perturb.noise_sigmas"])},
    }

    sdn_clamp_count = 0
    batch = int(cfg["training.batch_size"])

    def adversarial_corpus(tag: str) -> Corpus:
        attacked = []
        for start in range(0, len(test_set), batch):
            chunk = test_set[start : start + batch]
            x = torch.stack([item.image for item in chunk])
            y = torch.tensor([float(item.label) for item in chunk])
            if tag == "fgsm":
                adv = P.fgsm(x, y, baseline, eps=eps)
            else:
                adv = P.pgd(x, y, baseline, eps=eps, steps=pgd_steps, step_size=pgd_step)
            attacked.extend(adv)
        return Corpus(
            [CorpusItem(img, item.label, tag, item.path) for img, item in zip(attacked, test_set)]
        )

    def perturbed_corpus(tag: str) -> Corpus:
        nonlocal sdn_clamp_count
        if tag in ("fgsm", "pgd"):
            return adversarial_corpus(tag)
        items = []
        for i, item in enumerate(test_set):
            seed_i = int(rng_for(cfg.seed, "perturb-seed", tag, i).integers(2**62))
            if tag in ("blur", "crop", "compression", "noise"):
                kind = P.PerturbKind(tag)
                img = P.apply_common(item.image, P.PerturbationSpec(kind, grids[kind]), seed_i)
            elif tag == "mix":
                params = {}
                for g in grids.values():
                    params.update(g)
                img = P.apply_common(item.image, P.PerturbationSpec(P.PerturbKind.MIX, params), seed_i)
            elif tag == "sdn":
                if item.label == LABEL_NAMES["fake"]:
                    img, stats = P.sdn_detailed(item.image, sdn_reference, float(cfg["perturb.sdn_max_scale"]))
                    sdn_clamp_count += int(stats.clamp_affected)
                else:
                    img = item.image
            else:
                raise DataError(f"unknown perturbation tag {tag}")
            items.append(CorpusItem(img, item.label, tag, item.path))
        return Corpus(items)

    tags = ["clean", "blur", "crop", "compression", "noise", "mix", "fgsm", "pgd", "sdn"]
    corpora = {"clean": test_set}
    for tag in tags[1:]:
        log(f"[perturb] generating '{tag}' corpus")
        corpora[tag] = perturbed_corpus(tag)

    # --- evaluation -----------------------------------------------------
    report = build_matrix(bundle, corpora, log=log)
    for tag, corp in corpora.items():
        scores = baseline_scores(baseline, corp)
        report.baseline_rows[tag] = summarize(records_for_corpus(scores, corp, tag))
        log(f"[eval:baseline] {tag}: acc={report.baseline_rows[tag].acc:.2f}")

    # --- spectral alignment (edge completion) ---------------------------
    report.extras["spectral_alignment"] = _spectral_alignment(test_set, restorers[ViewKind.EDGE], cfg)
    report.extras["sdn_clamp_affected"] = sdn_clamp_count
    report.config_digest = cfg.digest()
    report.dataset_digests = {"toy": manifest.digest}
    report.save_json(workdir / "report.json")
    report.save_csv(workdir / "report.csv")
    log(f"[report] written to {workdir / 'report.json'}")
    return report


def _spectral_alignment(test_set: Corpus, edge_restorer, cfg: PipelineConfig) -> dict:
    """Mean-profile gap between classes before and after edge-to-image
    completion (completed pairs measured on the restorer outputs)."""

    def completed(images):
        out = []
        with torch.no_grad():
            for img in images:
                view = extract_view(img, ViewKind.EDGE, edge_params=cfg.edge_params())
                out.append(complete(view, edge_restorer).restored)
        return out

    reals = [it.image for it in test_set.reals()]
    fakes = [it.image for it in test_set.fakes()]
    gap_before = profile_gap([azimuthal_profile(i) for i in reals], [azimuthal_profile(i) for i in fakes])
    gap_after = profile_gap(
        [azimuthal_profile(i) for i in completed(reals)],
        [azimuthal_profile(i) for i in completed(fakes)],
    )
    return {"gap_before": gap_before, "gap_after_edge_completion": gap_after}
