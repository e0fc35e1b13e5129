"""Two-stage optimization driver.

Stage 1 trains the per-view restorers on real images only. Stage 2 freezes
them (unless configured otherwise), trains the per-view feature heads and
classifiers on real+fake data, and alternates the closed-form update of the
fusion weights at epoch boundaries. All randomness is derived functionally
from (seed, epoch, step, item), so interrupted runs resume bit-identically
from the per-epoch checkpoints.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .classifier import CLAMP_EPS, ClassifierConfig, Prediction, SmallCNN
from .config import PipelineConfig, default_config
from .data import LABEL_FAKE, LABEL_REAL, Corpus
from .errors import ConfigError, ContractError, DataError
from .fusion import FusionState, fuse_predictions, fused_loss
from .imgio import image_digest, rng_for
from .intraview import FeatureEnhancer, FeaturePyramid, LowPassResidualAttention
from .restorer import (
    Restorer,
    RestorerConfig,
    complete,
    frequency_loss,
    restorer_input,
    train_restorer,
)
from .views import ALL_VIEWS, EdgeParams, ViewKind, extract_view, make_mask_layout

CHECKPOINT_VERSION = 1


@dataclass
class OptimSchedule:
    """Adam-based schedule: the learning rate halves every
    `lr_halving_period` epochs, exactly lr * 0.5^floor(epoch / period)."""

    lr: float = 1e-3
    lr_halving_period: int = 10
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2, got {self.batch_size}")

    def lr_at(self, epoch: int) -> float:
        return self.lr * 0.5 ** (epoch // self.lr_halving_period)


def enable_determinism(seed: int) -> None:
    """Seed torch and switch on exact-determinism kernels."""
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True)


def param_checksum(module: nn.Module) -> str:
    h = hashlib.sha256()
    for name, p in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(p.detach().cpu().numpy().tobytes())
    return h.hexdigest()


class ViewHead(nn.Module):
    """Per-view feature pipeline feeding one classifier: feature pyramid ->
    enhancement with the restored image -> low-pass residual attention."""

    def __init__(self, view_kind: ViewKind, feature_channels, pyramid_channels, classifier_config: ClassifierConfig, filt):
        super().__init__()
        self.view_kind = view_kind
        self.pyramid = FeaturePyramid(feature_channels, pyramid_channels)
        self.enhancer = FeatureEnhancer(pyramid_channels)
        self.attention = LowPassResidualAttention(2 * pyramid_channels, pyramid_channels, filt)
        self.classifier = SmallCNN(classifier_config, view_kind)

    def forward(self, original, completion):
        z = self.pyramid(completion.decoder_features)
        feat = self.enhancer(completion.restored, z)
        feat = self.attention(original, completion.restored, feat)
        return self.classifier(feat)


@dataclass
class Bundle:
    """A trained pipeline: one restorer and one head per view, plus the
    fusion state and the config they were trained under."""

    restorers: dict
    heads: dict
    fusion: FusionState
    config: PipelineConfig
    beta_history: list = field(default_factory=list)
    loss_history: dict = field(default_factory=dict)

    @property
    def views(self) -> list[ViewKind]:
        return list(self.restorers.keys())

    def save(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(self.config.values, indent=2, sort_keys=True))
        for kind, restorer in self.restorers.items():
            save_restorer_checkpoint(restorer, out / f"restorer_{kind.value}.pt", seed=self.config.seed)
        for kind, head in self.heads.items():
            torch.save(
                {
                    "version": CHECKPOINT_VERSION,
                    "kind": kind.value,
                    "state": head.state_dict(),
                },
                out / f"head_{kind.value}.pt",
            )
        (out / "fusion.json").write_text(
            json.dumps(
                {
                    "beta": self.fusion.beta.tolist(),
                    "tau": self.fusion.tau,
                    "per_view_losses": self.fusion.per_view_losses.tolist(),
                    "beta_history": [list(map(float, b)) for b in self.beta_history],
                    "loss_history": self.loss_history,
                },
                indent=2,
            )
        )

    @classmethod
    def load(cls, bundle_dir) -> "Bundle":
        root = Path(bundle_dir)
        if not (root / "config.json").exists():
            raise ConfigError(f"no config.json in bundle dir {root}")
        config = default_config(**json.loads((root / "config.json").read_text()))
        restorers, heads = {}, {}
        for kind in ALL_VIEWS:
            rpath = root / f"restorer_{kind.value}.pt"
            hpath = root / f"head_{kind.value}.pt"
            if not rpath.exists() or not hpath.exists():
                raise ConfigError(f"bundle is missing a checkpoint for view '{kind.value}'")
            restorers[kind] = load_restorer_checkpoint(rpath)
            head = build_head(kind, restorers[kind], config)
            head.load_state_dict(torch.load(hpath, weights_only=False)["state"])
            head.eval()
            heads[kind] = head
        fusion_meta = json.loads((root / "fusion.json").read_text())
        fusion = FusionState(np.array(fusion_meta["beta"]), tau=fusion_meta["tau"])
        fusion.per_view_losses = np.array(fusion_meta["per_view_losses"])
        return cls(
            restorers,
            heads,
            fusion,
            config,
            beta_history=fusion_meta.get("beta_history", []),
            loss_history=fusion_meta.get("loss_history", {}),
        )


def save_restorer_checkpoint(restorer: Restorer, path, *, seed: int = 0, epoch: int | None = None, history=None) -> None:
    torch.save(
        {
            "version": CHECKPOINT_VERSION,
            "kind": restorer.view_kind.value,
            "config": asdict(restorer.config),
            "state": restorer.state_dict(),
            "seed": seed,
            "epoch": epoch,
            "history": history,
        },
        path,
    )


def load_restorer_checkpoint(path) -> Restorer:
    payload = torch.load(path, weights_only=False)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version in {path}")
    config = RestorerConfig(**payload["config"])
    model = Restorer(config, ViewKind(payload["kind"]))
    model.load_state_dict(payload["state"])
    model.eval()
    return model


def build_head(kind: ViewKind, restorer: Restorer, config: PipelineConfig) -> ViewHead:
    return ViewHead(
        kind,
        restorer.feature_channels,
        int(config["intraview.pyramid_channels"]),
        config.classifier_config(),
        config.butterworth(),
    )


def _views_for_batch(images, kind: ViewKind, config: PipelineConfig, layout_seeds):
    """Extract one view per image; masked layouts come from the given seeds."""
    edge = config.edge_params()
    ratio = float(config["views.mask_ratio"])
    fill = float(config["views.mask_fill"])
    out = []
    for img, lseed in zip(images, layout_seeds):
        layout = None
        if kind is ViewKind.MASKED:
            layout = make_mask_layout(img.shape[-2], img.shape[-1], ratio, lseed)
        out.append(extract_view(img, kind, layout=layout, edge_params=edge, fill=fill))
    return out


def _stratified_batches(corpus: Corpus, batch_size: int, rng) -> list[list[int]]:
    """50/50 real/fake batches; leftovers that cannot fill a half are dropped."""
    reals = [i for i, it in enumerate(corpus) if it.label == LABEL_REAL]
    fakes = [i for i, it in enumerate(corpus) if it.label == LABEL_FAKE]
    rng.shuffle(reals)
    rng.shuffle(fakes)
    half = batch_size // 2
    n = min(len(reals) // half, len(fakes) // half)
    return [reals[b * half : (b + 1) * half] + fakes[b * half : (b + 1) * half] for b in range(n)]


def train_stage1(
    real_corpus: Corpus,
    views,
    config: PipelineConfig,
    schedule: OptimSchedule,
    *,
    checkpoint_dir=None,
    log=None,
) -> dict:
    """Train one restorer per view on the real-only corpus; returns
    {ViewKind: Restorer} and persists a checkpoint per view."""
    restorers = {}
    histories = {}
    rconfig_base = config.restorer_config()
    if checkpoint_dir:
        Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
    for kind in views:
        ckpt = Path(checkpoint_dir) / f"restorer_{kind.value}.pt" if checkpoint_dir else None
        if ckpt and ckpt.exists():
            restorers[kind] = load_restorer_checkpoint(ckpt)
            if log:
                log(f"[stage1] reusing checkpoint for view '{kind.value}'")
            continue
        rconfig = RestorerConfig(**asdict(rconfig_base))
        model, history = train_restorer(
            real_corpus,
            kind,
            rconfig,
            schedule,
            edge_params=config.edge_params(),
            mask_ratio=float(config["views.mask_ratio"]),
            mask_fill=float(config["views.mask_fill"]),
            augment=config.augment_params(),
            val_fraction=float(config["training.val_fraction"]),
            log=log,
        )
        restorers[kind] = model
        histories[kind] = history
        if ckpt:
            save_restorer_checkpoint(
                model, ckpt, seed=schedule.seed, epoch=schedule.epochs,
                history={"pixel": history.pixel, "freq": history.freq, "val_pixel": history.val_pixel},
            )
    return restorers


def _prune_checkpoints(ckpt_dir: Path, pattern: str, keep: int) -> None:
    files = sorted(ckpt_dir.glob(pattern), key=lambda p: int(p.stem.rsplit("_", 1)[-1]))
    for stale in files[:-keep] if keep > 0 else files:
        stale.unlink()


def train_stage2(
    full_corpus: Corpus,
    restorers: dict,
    config: PipelineConfig,
    schedule: OptimSchedule,
    *,
    checkpoint_dir=None,
    log=None,
) -> tuple[dict, FusionState, dict]:
    """Train the per-view heads with the beta-weighted fused objective.

    Per iteration every sample flows through each view pathway; per epoch the
    fusion weights are re-solved from the epoch-mean per-view losses. Returns
    (heads, fusion state, history dict).
    """
    full_corpus.validate_labels()
    labels = {it.label for it in full_corpus}
    if labels != {LABEL_REAL, LABEL_FAKE}:
        raise ContractError("stage 2 needs both real and fake samples")

    views = list(restorers.keys())
    tau = float(config["fusion.tau"])
    per_view_only = bool(config["fusion.per_view_loss_only"])
    beta_update = str(config["fusion.beta_update"])
    update_k = int(config["fusion.beta_update_k"])
    continue_restorers = bool(config["training.continue_restorer_updates"])
    keep = int(config["training.checkpoint_keep"])
    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir else None

    pre_checksums = {k: param_checksum(r) for k, r in restorers.items()}
    for r in restorers.values():
        r.eval()

    torch.manual_seed(int(rng_for(schedule.seed, "stage2-init").integers(2**62)))
    heads = {kind: build_head(kind, restorers[kind], config) for kind in views}
    params = [p for head in heads.values() for p in head.parameters()]
    opt = torch.optim.Adam(params, lr=schedule.lr)
    restorer_opts = (
        {k: torch.optim.Adam(r.parameters(), lr=schedule.lr) for k, r in restorers.items()}
        if continue_restorers
        else {}
    )
    fusion = FusionState.uniform(len(views), tau=tau)
    history = {"beta": [], "per_view_loss": [], "epochs_done": 0}

    start_epoch = 0
    if ckpt_dir:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
        latest = sorted(ckpt_dir.glob("stage2_epoch_*.pt"), key=lambda p: int(p.stem.rsplit("_", 1)[-1]))
        if latest:
            payload = torch.load(latest[-1], weights_only=False)
            for kind in views:
                heads[kind].load_state_dict(payload["heads"][kind.value])
            opt.load_state_dict(payload["optimizer"])
            if continue_restorers:
                for kind in views:
                    restorers[kind].load_state_dict(payload["restorers"][kind.value])
                    restorer_opts[kind].load_state_dict(payload["restorer_opts"][kind.value])
            fusion.beta = np.array(payload["beta"])
            fusion.per_view_losses = np.array(payload["per_view_losses"])
            history = payload["history"]
            start_epoch = int(payload["epoch"]) + 1
            if log:
                log(f"[stage2] resuming from epoch {start_epoch}")

    n_views = len(views)
    for epoch in range(start_epoch, schedule.epochs):
        for group in opt.param_groups:
            group["lr"] = schedule.lr_at(epoch)
        for ropt in restorer_opts.values():
            for group in ropt.param_groups:
                group["lr"] = schedule.lr_at(epoch)

        batches = _stratified_batches(full_corpus, schedule.batch_size, rng_for(schedule.seed, "stage2-order", epoch))
        for head in heads.values():
            head.train()
        loss_sums = np.zeros(n_views)
        n_steps = 0
        for step, idxs in enumerate(batches):
            x = torch.stack([full_corpus[i].image for i in idxs])
            y = torch.tensor([float(full_corpus[i].label) for i in idxs])

            if continue_restorers:
                _restorer_refresh_step(restorers, restorer_opts, full_corpus, idxs, views, config, schedule, epoch, step)

            per_view_losses = []
            for kind in views:
                layout_seeds = [schedule.seed ^ (epoch * 1_000_003 + step) ^ int(i) for i in idxs]
                view_batch = _views_for_batch([full_corpus[i].image for i in idxs], kind, config, layout_seeds)
                v = torch.stack([restorer_input(vw, restorers[kind].config) for vw in view_batch])
                with torch.no_grad():
                    completion = restorers[kind](v)
                completion.restored = completion.restored.detach()
                completion.decoder_features = [f.detach() for f in completion.decoder_features]
                logits = heads[kind](x, completion)
                per_view_losses.append(F.binary_cross_entropy_with_logits(logits, y))

            if per_view_only:
                total = sum(per_view_losses)
            else:
                total = fused_loss(per_view_losses, fusion.beta, tau)
            opt.zero_grad()
            total.backward()
            opt.step()

            loss_sums += np.array([float(l.detach()) for l in per_view_losses])
            n_steps += 1
            if beta_update == "per_k_steps" and (step + 1) % update_k == 0:
                fusion.update(loss_sums / n_steps)

        epoch_means = loss_sums / max(n_steps, 1)
        fusion.update(epoch_means)
        history["beta"].append([float(b) for b in fusion.beta])
        history["per_view_loss"].append([float(m) for m in epoch_means])
        history["epochs_done"] = epoch + 1
        if log:
            log(
                f"[stage2] epoch {epoch}: "
                + " ".join(f"L_{k.value}={m:.4f}" for k, m in zip(views, epoch_means))
                + " beta=" + np.array2string(fusion.beta, precision=3)
            )

        if ckpt_dir:
            payload = {
                "version": CHECKPOINT_VERSION,
                "epoch": epoch,
                "heads": {k.value: heads[k].state_dict() for k in views},
                "optimizer": opt.state_dict(),
                "restorers": {k.value: restorers[k].state_dict() for k in views},
                "restorer_opts": {k.value: o.state_dict() for k, o in restorer_opts.items()},
                "beta": fusion.beta.tolist(),
                "per_view_losses": fusion.per_view_losses.tolist(),
                "history": history,
            }
            torch.save(payload, ckpt_dir / f"stage2_epoch_{epoch}.pt")
            _prune_checkpoints(ckpt_dir, "stage2_epoch_*.pt", keep)

    if not continue_restorers:
        post = {k: param_checksum(r) for k, r in restorers.items()}
        if post != pre_checksums:
            raise ContractError("restorer parameters changed during stage 2 with updates disabled")
    for head in heads.values():
        head.eval()
    return heads, fusion, history


def _restorer_refresh_step(restorers, restorer_opts, corpus, idxs, views, config, schedule, epoch, step):
    """Optional stage-2 restorer updates, fed by real samples only."""
    real_idxs = [i for i in idxs if corpus[i].label == LABEL_REAL]
    if not real_idxs:
        return
    lam = float(config["restorer.lambda_freq"])
    x = torch.stack([corpus[i].image for i in real_idxs])
    for kind in views:
        layout_seeds = [schedule.seed ^ (epoch * 7_368_787 + step) ^ int(i) for i in real_idxs]
        view_batch = _views_for_batch([corpus[i].image for i in real_idxs], kind, config, layout_seeds)
        v = torch.stack([restorer_input(vw, restorers[kind].config) for vw in view_batch])
        restorers[kind].train()
        out = restorers[kind](v)
        loss = (x - out.restored).abs().mean() + lam * frequency_loss(x, out.restored)
        restorer_opts[kind].zero_grad()
        loss.backward()
        restorer_opts[kind].step()
        restorers[kind].eval()


def view_probabilities(bundle: Bundle, images, kind: ViewKind) -> list[float]:
    """Evaluation-mode fake probabilities of one view pathway for a batch of
    images. Mask layouts are fixed per image by keying their seed off the
    image content, so repeated evaluation is deterministic."""
    config = bundle.config
    restorer = bundle.restorers[kind]
    head = bundle.heads[kind]
    restorer.eval()
    head.eval()
    views = []
    for image in images:
        layout = None
        if kind is ViewKind.MASKED:
            layout_seed = image_digest(image) ^ config.seed
            layout = make_mask_layout(
                image.shape[-2], image.shape[-1], float(config["views.mask_ratio"]), layout_seed
            )
        views.append(
            extract_view(
                image, kind, layout=layout, edge_params=config.edge_params(),
                fill=float(config["views.mask_fill"]),
            )
        )
    v = torch.stack([restorer_input(vw, restorer.config) for vw in views])
    x = torch.stack(list(images))
    with torch.no_grad():
        completion = restorer(v)
        logits = head(x, completion)
        probs = torch.sigmoid(logits).clamp(CLAMP_EPS, 1.0 - CLAMP_EPS)
    return [float(p) for p in probs.reshape(-1)]


def batch_predictions(bundle: Bundle, images, batch_size: int = 32) -> list[list[Prediction]]:
    """Per-image predictions from every view pathway, evaluated in batches."""
    missing = [k.value for k in ALL_VIEWS if k not in bundle.restorers or k not in bundle.heads]
    if missing:
        raise ConfigError(f"bundle is missing views: {missing}")
    images = list(images)
    out = [[] for _ in images]
    for start in range(0, len(images), batch_size):
        chunk = images[start : start + batch_size]
        for kind in bundle.views:
            for offset, p in enumerate(view_probabilities(bundle, chunk, kind)):
                out[start + offset].append(Prediction(p_fake=p, view=kind))
    return out


def detect(image: torch.Tensor, bundle: Bundle) -> tuple[float, str, list[Prediction]]:
    """Full forward pass in evaluation mode: per-view probabilities, their
    uniform average, and the thresholded verdict."""
    preds = batch_predictions(bundle, [image], batch_size=1)[0]
    p_fake, verdict = fuse_predictions(preds)
    return p_fake, verdict, preds


def train_baseline(corpus: Corpus, config: PipelineConfig, schedule: OptimSchedule, *, log=None) -> SmallCNN:
    """Reference detector: the same small CNN trained directly on raw pixels.

    Used both as the comparison point for robustness runs and as the
    gradient-exposing surrogate for the adversarial attacks.
    """
    corpus.validate_labels()
    if {it.label for it in corpus} != {LABEL_REAL, LABEL_FAKE}:
        raise ContractError("baseline training needs both classes")
    torch.manual_seed(int(rng_for(schedule.seed, "baseline-init").integers(2**62)))
    cfg = ClassifierConfig(
        backbone=str(config["classifier.backbone"]),
        input_channels=3,
        width=int(config["classifier.width"]),
        blocks=int(config["classifier.blocks"]),
        dropout=float(config["classifier.dropout"]),
    )
    model = SmallCNN(cfg)
    opt = torch.optim.Adam(model.parameters(), lr=schedule.lr)
    for epoch in range(schedule.epochs):
        for group in opt.param_groups:
            group["lr"] = schedule.lr_at(epoch)
        batches = _stratified_batches(corpus, schedule.batch_size, rng_for(schedule.seed, "baseline-order", epoch))
        model.train()
        total, n = 0.0, 0
        for idxs in batches:
            x = torch.stack([corpus[i].image for i in idxs])
            y = torch.tensor([float(corpus[i].label) for i in idxs])
            opt.zero_grad()
            loss = F.binary_cross_entropy_with_logits(model(x), y)
            loss.backward()
            opt.step()
            total += float(loss.detach())
            n += 1
        if log:
            log(f"[baseline] epoch {epoch}: loss={total / max(n, 1):.4f}")
    model.eval()
    return model


def baseline_scores(model: SmallCNN, corpus: Corpus, batch_size: int = 32) -> list[float]:
    model.eval()
    out = []
    with torch.no_grad():
        for start in range(0, len(corpus), batch_size):
            x = torch.stack([item.image for item in corpus[start : start + batch_size]])
            p = torch.sigmoid(model(x)).clamp(CLAMP_EPS, 1 - CLAMP_EPS)
            out.extend(float(v) for v in p.reshape(-1))
    return out
