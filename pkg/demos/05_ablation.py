"""Compression-augmentation ablation on a small benchmark.

Runs the same incremental problem twice, once distilling on plain batches
and once on rehearsal-CutMix batches, and prints average / last-step
accuracy plus the relative compression epoch time. Expect a few minutes.
The full five-mode matrix over many seeds is what `fecil ablate` does.
"""

import numpy as np

from fecil.training import RunConfig, TrainConfig, run_ablation

cfg = RunConfig(
    seed=0,
    dataset_kind="synth",
    dataset_seed=0,
    num_classes=6,
    per_class=48,
    test_per_class=12,
    image_side=12,
    protocol="B0",
    steps=3,
    memory_mode="total",
    memory_value=48,
    backbone_width=4,
    blocks_per_stage=1,
    train=TrainConfig(epochs_expand=10, epochs_compress=10, batch_size=32,
                      base_lr=0.05, crop_flip=False),
)

results = run_ablation(cfg, modes=("none", "r_cutmix"), seeds=(0,),
                       progress=lambda mode, seed, s:
                       print(f"  finished {mode} seed {seed}"))

base_time = np.mean(list(results["none"][0].step_epoch_times.values()))
print("\nmode       Avg     Last   epoch-time ratio")
for mode in ("none", "r_cutmix"):
    run = results[mode][0]
    t = np.mean(list(run.step_epoch_times.values()))
    print(f"{mode:9s} {100 * run.summary.avg_top1_compact:6.2f} "
          f"{100 * run.summary.last_top1_compact:7.2f} {t / base_time:10.2f}x")
