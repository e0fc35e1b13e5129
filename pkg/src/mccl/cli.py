"""Command line entry points.

    mccl synth-toy --out DIR [--n-real N --n-fake N --artifact KIND ...]
    mccl train     --config FILE [--stage 1|2]
    mccl detect    --bundle DIR IMAGE [IMAGE...]
    mccl perturb   --kind KIND --in DIR --out DIR --seed N [--params JSON]
    mccl eval      --bundle DIR --corpora MANIFEST --out REPORT.json
    mccl spectra   --manifest FILE --out CSV [--plot FILE]
    mccl run       --config FILE
    mccl write-config PATH
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import load_config, write_default_config
from .errors import McclError
from .perturb import PerturbKind


def _cmd_write_config(args):
    write_default_config(args.path)
    print(f"wrote default config to {args.path}")


def _cmd_synth_toy(args):
    from .pipeline import ToySpec, synthesize_toy_corpus

    spec = ToySpec(
        resolution=args.resolution,
        n_real=args.n_real,
        n_fake=args.n_fake,
        artifact=args.artifact,
        amplitude=args.amplitude,
        seed=args.seed,
    )
    manifest = synthesize_toy_corpus(spec, args.out)
    print(f"wrote {len(manifest)} images to {args.out} (digest {manifest.digest[:16]})")


def _cmd_train(args):
    from .pipeline import load_corpus, load_manifest, split_corpus
    from .training import Bundle, OptimSchedule, enable_determinism, train_stage1, train_stage2
    from .views import ViewKind

    cfg = load_config(args.config)
    enable_determinism(cfg.seed)
    workdir = Path(cfg["paths.workdir"])
    manifest = load_manifest(args.manifest or workdir / "corpus" / "manifest.csv")
    corpus = load_corpus(manifest, resolution=cfg.resolution)
    train_set, _ = split_corpus(corpus, float(cfg["toy.train_fraction"]))
    ckpt = workdir / "checkpoints"

    s1 = OptimSchedule(
        lr=float(cfg["training.lr"]), lr_halving_period=int(cfg["training.lr_halving_period"]),
        batch_size=int(cfg["training.batch_size"]), epochs=int(cfg["training.stage1_epochs"]), seed=cfg.seed,
    )
    restorers = train_stage1(train_set.reals(), list(ViewKind), cfg, s1, checkpoint_dir=ckpt, log=print)
    if args.stage == 1:
        print("stage 1 complete")
        return
    s2 = OptimSchedule(
        lr=float(cfg["training.lr"]), lr_halving_period=int(cfg["training.lr_halving_period"]),
        batch_size=int(cfg["training.batch_size"]), epochs=int(cfg["training.stage2_epochs"]), seed=cfg.seed,
    )
    heads, fusion, history = train_stage2(train_set, restorers, cfg, s2, checkpoint_dir=ckpt, log=print)
    bundle = Bundle(restorers, heads, fusion, cfg, beta_history=history["beta"], loss_history=history)
    bundle.save(workdir / "bundle")
    print(f"bundle written to {workdir / 'bundle'}")


def _cmd_detect(args):
    from .imgio import load_image
    from .training import Bundle, detect

    bundle = Bundle.load(args.bundle)
    for path in args.images:
        image = load_image(path, resolution=bundle.config.resolution)
        p_fake, verdict, preds = detect(image, bundle)
        per_view = " ".join(f"{p.view.value}={p.p_fake:.3f}" for p in preds)
        print(f"{path}: {verdict} (p_fake={p_fake:.4f}; {per_view})")


def _cmd_perturb(args):
    from . import perturb as P
    from .imgio import load_image, save_png
    from .pipeline import load_manifest, mean_profile, load_corpus

    kind = P.PerturbKind(args.kind)
    params = json.loads(args.params) if args.params else {}
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = load_manifest(Path(args.input) / "manifest.csv")

    reference = None
    if kind is P.PerturbKind.SDN:
        ref_source = args.sdn_reference or (Path(args.input) / "manifest.csv")
        ref_corpus = load_corpus(load_manifest(ref_source)).reals()
        if not len(ref_corpus):
            raise McclError("SDN needs a reference manifest containing real images")
        reference = mean_profile([it.image for it in ref_corpus])

    surrogate = None
    if kind in (P.PerturbKind.FGSM, P.PerturbKind.PGD):
        import torch

        from .classifier import ClassifierConfig, SmallCNN

        payload = torch.load(args.surrogate, weights_only=False)
        surrogate = SmallCNN(ClassifierConfig(**payload["config"]))
        surrogate.load_state_dict(payload["state"])
        surrogate.eval()

    sidecar = []
    for i, entry in enumerate(manifest.entries):
        image = load_image(manifest.root / entry.path)
        label = 0 if entry.label == "real" else 1
        if kind in (P.PerturbKind.BLUR, P.PerturbKind.CROP, P.PerturbKind.COMPRESSION, P.PerturbKind.NOISE, P.PerturbKind.MIX):
            attacked = P.apply_common(image, P.PerturbationSpec(kind, params), args.seed + i)
        elif kind is P.PerturbKind.FGSM:
            attacked = P.fgsm(image, label, surrogate, eps=args.eps)
        elif kind is P.PerturbKind.PGD:
            attacked = P.pgd(image, label, surrogate, eps=args.eps, steps=args.steps)
        else:
            attacked = P.sdn(image, reference) if label == 1 else image
        save_png(attacked, out_dir / entry.path)
        sidecar.append({"path": entry.path, "kind": kind.value, "params": params, "seed": args.seed + i})
    (out_dir / "perturbations.json").write_text(json.dumps(sidecar, indent=2))
    (out_dir / "manifest.csv").write_text((manifest.root / "manifest.csv").read_text())
    print(f"wrote {len(sidecar)} perturbed images to {out_dir}")


def _cmd_eval(args):
    from .metrics import build_matrix
    from .pipeline import load_corpus, load_manifest
    from .training import Bundle

    bundle = Bundle.load(args.bundle)
    corpora = {}
    for spec in args.corpora:
        tag, _, manifest_path = spec.partition("=")
        if not manifest_path:
            tag, manifest_path = Path(spec).parent.name or "corpus", spec
        corpora[tag] = load_corpus(load_manifest(manifest_path), resolution=bundle.config.resolution)
    report = build_matrix(bundle, corpora, log=print)
    report.config_digest = bundle.config.digest()
    report.save_json(args.out)
    print(f"report written to {args.out}")


def _cmd_spectra(args):
    import csv

    from .pipeline import load_corpus, load_manifest
    from .spectral import LOG_POWER_EPS, azimuthal_profile

    corpus = load_corpus(load_manifest(args.manifest))
    groups = {}
    for item in corpus:
        groups.setdefault(item.source_tag or ("fake" if item.label else "real"), []).append(item.image)

    rows = []
    for tag, images in sorted(groups.items()):
        profiles = [azimuthal_profile(img) for img in images]
        mean_log = np.mean([np.log(np.maximum(p.power, LOG_POWER_EPS)) for p in profiles], axis=0)
        for radius, value in zip(profiles[0].radii, mean_log):
            rows.append({"radius": int(radius), "mean_log_power": float(value),
                         "view_tag": args.view_tag, "corpus_tag": tag})
    with open(args.out, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["radius", "mean_log_power", "view_tag", "corpus_tag"])
        writer.writeheader()
        writer.writerows(rows)
    print(f"wrote {len(rows)} rows to {args.out}")

    if args.plot:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(6, 4))
        for tag, images in sorted(groups.items()):
            profiles = [azimuthal_profile(img) for img in images]
            mean_log = np.mean([np.log(np.maximum(p.power, LOG_POWER_EPS)) for p in profiles], axis=0)
            ax.plot(profiles[0].radii, mean_log, label=tag)
        ax.set_xlabel("radial frequency bin")
        ax.set_ylabel("mean log power")
        ax.legend()
        fig.tight_layout()
        fig.savefig(args.plot, dpi=120)
        print(f"plot written to {args.plot}")


def _cmd_run(args):
    from .pipeline import run_experiment

    report = run_experiment(load_config(args.config))
    clean = report.rows.get("clean")
    if clean:
        print(f"clean accuracy {clean.acc:.2f}, AP {clean.ap:.2f}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mccl", description="Multi-view completion detection toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("write-config", help="emit the default flat config with comments")
    p.add_argument("path")
    p.set_defaults(func=_cmd_write_config)

    p = sub.add_parser("synth-toy", help="synthesize a labeled toy corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--n-real", type=int, default=1000)
    p.add_argument("--n-fake", type=int, default=1000)
    p.add_argument("--artifact", default="spectral_bump",
                   choices=["grid", "checkerboard_residual", "spectral_bump"])
    p.add_argument("--amplitude", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_synth_toy)

    p = sub.add_parser("train", help="train stage 1 (restorers) and stage 2 (classifiers)")
    p.add_argument("--config", required=True)
    p.add_argument("--stage", type=int, choices=[1, 2], default=2)
    p.add_argument("--manifest", default=None, help="corpus manifest (defaults to workdir/corpus)")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("detect", help="classify images with a trained bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("images", nargs="+")
    p.set_defaults(func=_cmd_detect)

    p = sub.add_parser("perturb", help="write a perturbed copy of a corpus")
    p.add_argument("--kind", required=True, choices=[k.value for k in PerturbKind])
    p.add_argument("--in", dest="input", required=True, help="corpus dir containing manifest.csv")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--params", default=None, help="JSON dict of kind-specific parameters")
    p.add_argument("--eps", type=float, default=8.0 / 255.0)
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--surrogate", default=None, help="surrogate checkpoint for fgsm/pgd")
    p.add_argument("--sdn-reference", default=None, help="manifest of real images for the SDN reference")
    p.set_defaults(func=_cmd_perturb)

    p = sub.add_parser("eval", help="evaluate a bundle over tagged corpora")
    p.add_argument("--bundle", required=True)
    p.add_argument("--corpora", nargs="+", required=True, help="entries of the form tag=manifest.csv")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("spectra", help="export azimuthal power profiles as CSV")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--view-tag", default="raw")
    p.add_argument("--plot", default=None)
    p.set_defaults(func=_cmd_spectra)

    p = sub.add_parser("run", help="run the full experiment from a config file")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_run)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except McclError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
