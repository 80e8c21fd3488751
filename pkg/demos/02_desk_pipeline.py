#!/usr/bin/env python3
# End-to-end desk-scale pipeline on the synthetic shape dataset, using the
# library API directly (the CLI wraps exactly these calls). Expect a few
# minutes on one CPU core with the settings below; pass --full to use the
# calibrated desk preset the acceptance tests run.
#
# Run:  python3 demos/02_desk_pipeline.py [out_dir] [--full]

import dataclasses
import sys
import tempfile
from pathlib import Path

import torch

from obfuskit.config import ExperimentConfig
from obfuskit.data import gen_shape_attr
from obfuskit.evalkit import compute_fid, eval_inversion, eval_uncertainty
from obfuskit.modelio import AdversaryBundle, ModelBundle, dataset_tensors
from obfuskit.train import train_adversary, train_stage1, train_stage2

torch.set_num_threads(1)

args = [a for a in sys.argv[1:] if a != "--full"]
full = "--full" in sys.argv[1:]
out = Path(args[0]) if args else Path(tempfile.mkdtemp(prefix="desk_demo_"))

# Shapes on a plain background; four independent binary attributes (fill
# tone, background brightness, outline, corner mark). Labels come from the
# generator, so there is no annotation noise.
train_ds = gen_shape_attr(2048 if full else 512, size=32, seed=0)
# eval split stays comfortably above the adversary feature width (128) so the
# Frechet covariance at the end is well defined even in snappy mode
eval_ds = gen_shape_attr(512 if full else 256, size=32, seed=1, split="eval")
print(f"train {len(train_ds)} / eval {len(eval_ds)}, attrs {train_ds.attr_names}")

cfg = ExperimentConfig(desk_scale_overrides=True, seed=0).effective()
if not full:  # keep the demo snappy; quality is visibly lower than the preset
    cfg = dataclasses.replace(cfg, iters_stage1=600, iters_stage2=150, adversary_iters=150)
print(f"stage-1: {cfg.iters_stage1} iters, batch {cfg.batch_size}, "
      f"mode {cfg.discriminator_mode}")

r1 = train_stage1(cfg, train_ds, out / "s1")
print(f"stage-1 done, final terms: rec={r1.final_terms['rec']:.3f} "
      f"bi={r1.final_terms['bi']:.3f} -> {r1.checkpoint_path}")

r2 = train_stage2(cfg, train_ds, r1.checkpoint_path, out / "s2")
print(f"stage-2 done (mixing network) -> {r2.checkpoint_path}")

# Two held-out adversaries trained on the same data, never on model outputs:
# a plain one to score inversions, a mixup one whose soft predictions make
# entropy a meaningful uncertainty measure.
ra = train_adversary(train_ds, False, cfg, out / "adv")
rm = train_adversary(train_ds, True, cfg, out / "advm")
model = ModelBundle.load(r2.checkpoint_path)
adv = AdversaryBundle.load(ra.checkpoint_path)
advm = AdversaryBundle.load(rm.checkpoint_path)

print("\ninversion report (acc is against ORIGINAL labels; low = obfuscated):")
rep = eval_inversion(model, adv, eval_ds, out_path=out / "inversion_report.csv")
for row in rep.rows:
    print(f"  {row['attribute']:>12s} {row['kind']:>9s}  acc {row['acc']:.3f}")

print("\nuncertainty report (entropy in bits; gain is ours - real):")
urep = eval_uncertainty(model, advm, eval_ds, out_path=out / "uncertainty_report.csv")
for row in urep.rows:
    print(f"  {row['attribute']:>12s} {row['direction']:>18s}  "
          f"gain {row['entropy_gain']:+.3f}  p {row['prob_real']:.2f}->{row['prob_ours']:.2f}")
print(f"  mean entropy gain: {urep.mean_entropy_gain():+.3f} bits")

# Frechet distance between real and obfuscated eval images under the
# adversary's penultimate features -- a single realism number.
x, y = dataset_tensors(eval_ds)
xp, _ = model.obfuscate(x.float(), 0)
print(f"\nFID(real, obfuscated@attr0) = {compute_fid(x.float(), xp, adv):.3f}")
print(f"\nartifacts under {out}")
