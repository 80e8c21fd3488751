"""Command-line entry point: data generation, two-stage training, evaluation,
single-image obfuscation, the 2-D toy experiment, and the inference service.

One binary with subcommands. The config file is authoritative; repeated
``--set key=value`` flags override it, and every training verb echoes the
effective configuration to a re-loadable ``effective.cfg`` next to its
outputs. All relative paths are resolved against ``--workdir``. Exit status
is 0 on success, 1 on runtime failure (single-line error on stderr), 2 on
usage errors.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from . import evalkit, train
from .config import ExperimentConfig, apply_overrides, dump_config, load_config
from .data import (
    PreprocessSpec,
    gen_shape_attr,
    gen_two_gaussians,
    load_attr_dataset,
    preprocess_pil,
    save_attr_dataset,
    to_uint8,
)
from .modelio import AdversaryBundle, ModelBundle, images_to_tensor, tensor_to_images

__all__ = ["main", "build_parser"]


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="key=value config file (defaults apply if omitted)")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE", help="override one config key (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="obfuskit",
        description="Two-stage attribute obfuscation: train, evaluate, serve.",
    )
    parser.add_argument("--workdir", default=".", help="base directory for all relative paths")
    sub = parser.add_subparsers(dest="verb", required=True, metavar="VERB")

    p = sub.add_parser("gen-data", help="generate the synthetic shape-attribute dataset")
    _add_config_args(p)
    p.add_argument("--out", default="data", help="output directory (train/ and eval/ subdirs)")
    p.add_argument("--n-train", type=int, default=2048, help="training set size (default 2048)")
    p.add_argument("--n-eval", type=int, default=512, help="eval set size (default 512)")

    p = sub.add_parser("train-stage1", help="train encoder/generator/discriminators")
    _add_config_args(p)
    p.add_argument("--data", required=True, help="dataset directory from gen-data")
    p.add_argument("--out", required=True, help="output directory for checkpoint and curves")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")

    p = sub.add_parser("train-stage2", help="train the pixel-mixing network on a frozen stage-1 model")
    _add_config_args(p)
    p.add_argument("--data", required=True)
    p.add_argument("--stage1", required=True, help="stage-1 checkpoint path")
    p.add_argument("--out", required=True)

    p = sub.add_parser("train-adversary", help="train the held-out attribute adversary")
    _add_config_args(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mixup", action="store_true", help="train with mixup interpolation")

    p = sub.add_parser("train-toy", help="2-D two-Gaussian ablation of the discriminator modes")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE", help="override the toy config (repeatable)")
    p.add_argument("--out", required=True)
    p.add_argument("--n-per-class", type=int, default=256, help="points per cluster (default 256)")
    p.add_argument("--std", type=float, default=0.5, help="cluster standard deviation (default 0.5)")

    p = sub.add_parser("eval-inversion", help="adversary rates on attribute-inverted images")
    p.add_argument("--model", required=True, help="stage-1 (or stage-2) checkpoint")
    p.add_argument("--adversary", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default="inversion_report.csv")
    p.add_argument("--attrs", default=None, help="comma-separated attribute subset")
    p.add_argument("--max-eval", type=int, default=None)

    p = sub.add_parser("eval-uncertainty", help="entropy/probability table after obfuscation")
    p.add_argument("--model", required=True, help="stage-2 checkpoint")
    p.add_argument("--adversary", required=True, help="mixup adversary checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--out", default="uncertainty_report.csv")
    p.add_argument("--attrs", default=None)
    p.add_argument("--max-eval", type=int, default=None)

    p = sub.add_parser("eval-fid", help="Frechet feature distance real vs transformed eval images")
    p.add_argument("--model", required=True)
    p.add_argument("--adversary", required=True, help="feature-extractor checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--out", default="fid.txt")
    p.add_argument("--transform", choices=("invert", "obfuscate"), default="obfuscate")
    p.add_argument("--attrs", default=None)

    p = sub.add_parser("sweep-delta2", help="privacy/utility trade-off across utility margins")
    _add_config_args(p)
    p.add_argument("--data", required=True)
    p.add_argument("--eval-data", default=None, help="separate eval dataset directory")
    p.add_argument("--out", required=True)
    p.add_argument("--values", default="0,0.1,0.2", help="comma-separated delta2 values")

    p = sub.add_parser("obfuscate", help="edit one attribute of a single image")
    p.add_argument("--checkpoint", required=True, help="stage-2 checkpoint (stage-1 works for invert)")
    p.add_argument("--input", required=True, help="input image path")
    p.add_argument("--attr", required=True, help="attribute name to edit")
    p.add_argument("--mode", choices=("invert", "obfuscate"), required=True)
    p.add_argument("--value", choices=("0", "1", "auto"), default="auto",
                   help="target code value; auto flips the model's rounded estimate")
    p.add_argument("--out", default="obfuscated.png")
    p.add_argument("--lambda-out", default=None,
                   help="lambda-map image path (default <out>_lambda.png)")

    p = sub.add_parser("export-figures", help="scatter and histogram CSVs for the appendix figures")
    p.add_argument("--model", required=True, help="stage-2 checkpoint")
    p.add_argument("--adversary", required=True, help="mixup adversary checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--attrs", default=None)
    p.add_argument("--max-eval", type=int, default=None)

    p = sub.add_parser("serve", help="HTTP inference service over frozen checkpoints")
    p.add_argument("--checkpoint", required=True, help="stage-2 checkpoint to serve")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8008)

    return parser


def _ws(workdir: Path, p: str | None) -> Path | None:
    if p is None:
        return None
    p = Path(p)
    return p if p.is_absolute() else workdir / p


def _load_cfg(args) -> ExperimentConfig:
    return load_config(getattr(args, "config", None), args.overrides)


def _spec_for(cfg: ExperimentConfig) -> PreprocessSpec:
    return PreprocessSpec(crop=cfg.image_size, resize=cfg.image_size,
                          value_range=(cfg.value_low, cfg.value_high))


def _load_ds(path: Path, cfg: ExperimentConfig, split: str):
    return load_attr_dataset(path / "images", path / "attrs.txt", _spec_for(cfg), split=split)


def _attr_list(raw: str | None) -> list[str] | None:
    return [a.strip() for a in raw.split(",") if a.strip()] if raw else None


def _sidecar(cfg: ExperimentConfig, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out_dir / "effective.cfg")


def _cmd_gen_data(args, wd: Path) -> int:
    cfg = _load_cfg(args)
    out = _ws(wd, args.out)
    for split, n, seed in (("train", args.n_train, cfg.seed), ("eval", args.n_eval, cfg.seed + 1)):
        ds = gen_shape_attr(n, size=cfg.image_size, seed=seed,
                            value_range=(cfg.value_low, cfg.value_high), split=split)
        path = save_attr_dataset(ds, out / split)
        print(f"{split}: {len(ds)} images, attrs {','.join(ds.attr_names)} -> {path.parent}")
    return 0


def _cmd_train_stage1(args, wd: Path) -> int:
    cfg = _load_cfg(args)
    out = _ws(wd, args.out)
    _sidecar(cfg, out)
    ds = _load_ds(_ws(wd, args.data), cfg, "train")
    result = train.train_stage1(cfg, ds, out, resume=_ws(wd, args.resume))
    print(f"stage-1 checkpoint: {result.checkpoint_path}")
    print(f"loss curves: {result.curve_path}")
    return 0


def _cmd_train_stage2(args, wd: Path) -> int:
    cfg = _load_cfg(args)
    out = _ws(wd, args.out)
    _sidecar(cfg, out)
    ds = _load_ds(_ws(wd, args.data), cfg, "train")
    result = train.train_stage2(cfg, ds, _ws(wd, args.stage1), out)
    print(f"stage-2 checkpoint: {result.checkpoint_path}")
    print(f"loss curves: {result.curve_path}")
    return 0


def _cmd_train_adversary(args, wd: Path) -> int:
    cfg = _load_cfg(args)
    out = _ws(wd, args.out)
    _sidecar(cfg, out)
    ds = _load_ds(_ws(wd, args.data), cfg, "train")
    result = train.train_adversary(ds, args.mixup, cfg, out)
    print(f"adversary checkpoint: {result.checkpoint_path}")
    return 0


def _cmd_train_toy(args, wd: Path) -> int:
    cfg = apply_overrides(train.toy_default_config(), args.overrides)
    out = _ws(wd, args.out)
    _sidecar(cfg, out)
    pts = gen_two_gaussians(args.n_per_class, std=args.std, seed=cfg.seed)
    report = train.train_toy(cfg, pts, out)
    for mode, res in report.modes.items():
        print(f"{mode}: success +->- {res.success_pos_to_neg:.2f}, "
              f"-->+ {res.success_neg_to_pos:.2f}, "
              f"axial distance {res.mean_axial_distance:.3f}")
    print(f"files: {', '.join(str(f) for f in report.files)}")
    return 0


def _cmd_eval_inversion(args, wd: Path) -> int:
    model = ModelBundle.load(_ws(wd, args.model))
    adversary = AdversaryBundle.load(_ws(wd, args.adversary))
    ds = _load_ds(_ws(wd, args.data), model.config, "eval")
    out = _ws(wd, args.out)
    report = evalkit.eval_inversion(model, adversary, ds, attrs=_attr_list(args.attrs),
                                    max_eval=args.max_eval, out_path=out)
    for w in report.warnings:
        print(f"warning: {w}", file=sys.stderr)
    for row in report.rows:
        print(f"{row['attribute']:>16s} {row['kind']:>9s}  "
              f"tpr {row['tpr']:.3f}  tnr {row['tnr']:.3f}  acc {row['acc']:.3f}")
    print(f"report: {out}")
    return 0


def _cmd_eval_uncertainty(args, wd: Path) -> int:
    model = ModelBundle.load(_ws(wd, args.model))
    adversary = AdversaryBundle.load(_ws(wd, args.adversary))
    ds = _load_ds(_ws(wd, args.data), model.config, "eval")
    out = _ws(wd, args.out)
    report = evalkit.eval_uncertainty(model, adversary, ds, attrs=_attr_list(args.attrs),
                                      max_eval=args.max_eval, out_path=out)
    for w in report.warnings:
        print(f"warning: {w}", file=sys.stderr)
    for row in report.rows:
        print(f"{row['attribute']:>16s} {row['direction']:>18s}  "
              f"H {row['entropy_real']:.3f}->{row['entropy_ours']:.3f} "
              f"(gain {row['entropy_gain']:+.3f})  "
              f"p {row['prob_real']:.3f}->{row['prob_ours']:.3f}")
    print(f"mean entropy gain: {report.mean_entropy_gain():+.4f} bits")
    print(f"report: {out}")
    return 0


def _cmd_eval_fid(args, wd: Path) -> int:
    model = ModelBundle.load(_ws(wd, args.model))
    adversary = AdversaryBundle.load(_ws(wd, args.adversary))
    ds = _load_ds(_ws(wd, args.data), model.config, "eval")
    attrs = _attr_list(args.attrs) or list(ds.attr_names)
    x = images_to_tensor(ds.images)
    y = torch.from_numpy(ds.labels.copy())
    outs = []
    for name in attrs:
        idx = ds.attr_names.index(name) if name in ds.attr_names else -1
        if idx < 0:
            raise ValueError(f"unknown attribute {name!r}; dataset has {tuple(ds.attr_names)}")
        if args.transform == "obfuscate":
            outs.append(model.obfuscate(x, idx)[0])
        else:
            mask = torch.zeros_like(y)
            mask[:, idx] = 1.0
            values = torch.zeros_like(y)
            values[:, idx] = 1.0 - y[:, idx]
            outs.append(model.invert(x, mask, values))
    fid = evalkit.compute_fid(x, torch.cat(outs), adversary)
    out = _ws(wd, args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(f"{fid:.6f}\n")
    print(f"fid ({args.transform}, {len(attrs)} attrs): {fid:.4f} -> {out}")
    return 0


def _cmd_sweep_delta2(args, wd: Path) -> int:
    cfg = _load_cfg(args)
    out = _ws(wd, args.out)
    _sidecar(cfg, out)
    ds = _load_ds(_ws(wd, args.data), cfg, "train")
    ds_eval = _load_ds(_ws(wd, args.eval_data), cfg, "eval") if args.eval_data else None
    values = [float(v) for v in args.values.split(",") if v.strip()]
    rows = evalkit.tradeoff_sweep(cfg, values, ds, out, ds_eval=ds_eval)
    for r in rows:
        print(f"delta2 {r['delta2']:g}: privacy {r['privacy']:.3f}  utility {r['utility']:.3f}")
    print(f"table: {out / 'tradeoff.csv'}")
    return 0


def _cmd_obfuscate(args, wd: Path) -> int:
    model = ModelBundle.load(_ws(wd, args.checkpoint))
    if args.attr not in model.attr_names:
        raise ValueError(f"unknown attribute {args.attr!r}; model has {model.attr_names}")
    idx = model.attr_names.index(args.attr)
    cfg = model.config
    in_path = _ws(wd, args.input)
    with Image.open(in_path) as img:
        spec = PreprocessSpec(crop=min(img.size), resize=cfg.image_size,
                              value_range=(cfg.value_low, cfg.value_high))
        arr = preprocess_pil(img, spec)
    x = images_to_tensor(arr[None])

    value = None if args.value == "auto" else float(args.value)
    if args.mode == "invert":
        if value is None:
            out_t, _ = model.apply_edits(x, [(idx, "invert")])
        else:
            out_t, _ = model.apply_edits(x, [(idx, "set1" if value else "set0")])
        lam_img = np.zeros(out_t.shape[-2:], dtype=np.float32)  # full replacement
    else:
        out_t, lam = model.mix_edit(x, idx, value)
        lam_img = lam[0].numpy()

    out_path = _ws(wd, args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    u8 = to_uint8(tensor_to_images(out_t)[0], (cfg.value_low, cfg.value_high))
    Image.fromarray(u8).save(out_path)
    lam_path = _ws(wd, args.lambda_out) if args.lambda_out else \
        out_path.with_name(out_path.stem + "_lambda.png")
    Image.fromarray(np.clip(np.round(lam_img * 255.0), 0, 255).astype(np.uint8), "L").save(lam_path)
    print(f"output: {out_path}")
    print(f"lambda map: {lam_path}")
    return 0


def _cmd_export_figures(args, wd: Path) -> int:
    model = ModelBundle.load(_ws(wd, args.model))
    adversary = AdversaryBundle.load(_ws(wd, args.adversary))
    ds = _load_ds(_ws(wd, args.data), model.config, "eval")
    out = _ws(wd, args.out)
    attrs = _attr_list(args.attrs)
    files = evalkit.export_scatter(model, adversary, ds, out, attrs=attrs, max_eval=args.max_eval)
    files += evalkit.export_histograms(model, adversary, ds, out, attrs=attrs, max_eval=args.max_eval)
    print(f"wrote {len(files)} files under {out}")
    return 0


def _cmd_serve(args, wd: Path) -> int:
    from . import serve as serve_mod

    server = serve_mod.start(_ws(wd, args.checkpoint), host=args.host, port=args.port)
    print(f"serving on http://{args.host}:{server.server_address[1]}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown_clean()
    return 0


_HANDLERS = {
    "gen-data": _cmd_gen_data,
    "train-stage1": _cmd_train_stage1,
    "train-stage2": _cmd_train_stage2,
    "train-adversary": _cmd_train_adversary,
    "train-toy": _cmd_train_toy,
    "eval-inversion": _cmd_eval_inversion,
    "eval-uncertainty": _cmd_eval_uncertainty,
    "eval-fid": _cmd_eval_fid,
    "sweep-delta2": _cmd_sweep_delta2,
    "obfuscate": _cmd_obfuscate,
    "export-figures": _cmd_export_figures,
    "serve": _cmd_serve,
}


def main(argv: list[str] | None = None) -> int:
    torch.set_num_threads(1)
    args = build_parser().parse_args(argv)
    wd = Path(args.workdir)
    try:
        return _HANDLERS[args.verb](args, wd)
    except KeyboardInterrupt:
        print("error: interrupted", file=sys.stderr)
        return 1
    except Exception as exc:  # single-line machine-parsable failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
