"""End-to-end acceptance gate: nine checks, one summary line each.

Checks 5-7 share one five-mode, five-seed run of the full desk benchmark
(configs/desk.toml) through a session fixture. That run dominates the
suite's wall time at roughly four minutes per (mode, seed) on one core;
everything else here finishes in seconds.
"""

import os
import struct
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE
from test_memory import brute_force_herding

from fecil.checkpoint import load_compact, save_compact
from fecil.config import load_run_config
from fecil.datasets import DatasetError, load_cifar_binary, load_idx, synth_gaussians
from fecil.gradcheck import run_gradient_suite
from fecil.memory import herding_select
from fecil.mixing import cutmix_apply, plan_mix
from fecil.networks import BackboneConfig, Classifier, expand, weight_align
from fecil.training import (AUG_MODES, TrainConfig, _rng, channel_stats, evaluate,
                            run_ablation, train_expansion, train_first_task)
from fecil.cli import main as cli_main

DESK_CONFIG = os.path.join(os.path.dirname(__file__), os.pardir, "configs", "desk.toml")


def record(num, label, body):
    """Run one criterion body() -> (ok, detail); log it for the summary."""
    try:
        ok, detail = body()
    except BaseException as e:
        ACCEPTANCE[num] = (label, "FAIL", f"errored: {type(e).__name__}")
        raise
    ACCEPTANCE[num] = (label, "PASS" if ok else "FAIL", detail)
    assert ok, f"criterion {num} ({label}): {detail}"


@pytest.fixture(scope="session")
def desk_ablation():
    cfg = load_run_config(DESK_CONFIG)
    # guard against the preset drifting away from the benchmark definition
    assert (cfg.num_classes, cfg.steps, cfg.memory_value) == (10, 5, 100)
    assert (cfg.train.epochs_expand, cfg.train.epochs_compress) == (60, 60)
    return run_ablation(cfg, modes=AUG_MODES, seeds=(0, 1, 2, 3, 4))


def test_criterion_1_gradient_suite():
    def body():
        t0 = time.perf_counter()
        results = run_gradient_suite(seed=0, trials_per_op=10)
        elapsed = time.perf_counter() - t0
        cases = sum(r.trials for r in results)
        worst = max(r.max_rel_err for r in results)
        ok = cases >= 100 and worst < 1e-4 and elapsed < 60.0
        return ok, f"{cases} cases, worst rel err {worst:.2e}, {elapsed:.1f}s"

    record(1, "gradients match central differences", body)


def test_criterion_2_cutmix_mask_law():
    def body():
        rng = np.random.default_rng(0)
        zeros = np.zeros((16, 16, 1), dtype=np.float32)
        ones = np.ones((16, 16, 1), dtype=np.float32)
        lams = np.empty(10_000)
        for i in range(10_000):
            plan = plan_mix(16, 16, 0.2, rng, source_j=0)
            mixed, lam_eff = cutmix_apply(zeros, ones, plan.box)
            pasted = float(mixed.sum())
            if pasted != (1.0 - lam_eff) * 256.0 or lam_eff != plan.lambda_eff:
                return False, f"plan {i}: {pasted} pasted pixels, lambda_eff {lam_eff}"
            lams[i] = plan.lambda_raw
        mean, var = float(lams.mean()), float(lams.var())
        ok = abs(mean - 0.5) <= 0.01 and abs(var - 0.1786) <= 0.005
        return ok, f"10000 plans exact; lambda mean {mean:.4f}, variance {var:.4f}"

    record(2, "cutmix pixel-count law and Beta moments", body)


def test_criterion_3_herding_matches_exhaustive_greedy():
    def body():
        rng = np.random.default_rng(1)
        for trial in range(1000):
            n = int(rng.integers(1, 9))
            d = int(rng.integers(1, 5))
            if trial % 2:
                # small-integer lattices make exact distance ties common
                feats = rng.integers(0, 3, size=(n, d)).astype(np.float64)
            else:
                feats = rng.standard_normal((n, d))
            if herding_select(feats, n) != brute_force_herding(feats, n):
                return False, f"trial {trial} (n={n}, d={d}) diverges from the oracle"
        return True, "1000 instances, half tie-heavy, all equal to exhaustive greedy"

    record(3, "herding equals exhaustive greedy incl. ties", body)


def test_criterion_4_freezing_and_weight_alignment():
    def body():
        train, _ = synth_gaussians(num_classes=4, per_class=32, image_side=12, seed=5)
        config = TrainConfig(epochs_expand=5, epochs_compress=5, batch_size=32,
                             base_lr=0.05, crop_flip=False)
        first = train.class_subset([0, 1])
        norm = channel_stats(first.images)
        net1 = train_first_task(first, [0, 1], BackboneConfig(4, 1, 1), config,
                                _rng(0, 1, 0), _rng(0, 1, 1), norm=norm)
        big = expand(net1, [2, 3], _rng(0, 2, 0))
        params_before = {k: t.data.copy() for k, t in big.prev_extractor.params()}
        bufs_before = {k: t.data.copy() for k, t in big.prev_extractor.buffers()}
        train_expansion(big, train, config, _rng(0, 2, 1), norm, [], 2, [0, 1])
        frozen_ok = (
            all(np.array_equal(t.data, params_before[k]) for k, t in big.prev_extractor.params())
            and all(np.array_equal(t.data, bufs_before[k]) for k, t in big.prev_extractor.buffers()))
        moved = any(not np.array_equal(t.data, params_before[k])
                    for k, t in big.new_extractor.params())
        if not (frozen_ok and moved):
            return False, f"frozen branch intact: {frozen_ok}, trainable branch moved: {moved}"

        rng = np.random.default_rng(7)
        w0 = rng.standard_normal((10, 16)).astype(np.float32)
        head = Classifier(w0.copy(), list(range(10)))
        weight_align(head, list(range(6)), list(range(6, 10)))
        w1 = head.weight.data.astype(np.float64)
        norm_gap = abs(np.linalg.norm(w1[:6], axis=1).mean()
                       - np.linalg.norm(w1[6:], axis=1).mean())
        feats = rng.standard_normal((1000, 16)).astype(np.float32)
        before, after = feats @ w0.T, feats @ head.weight.data.T
        argmax_ok = ((before[:, :6].argmax(axis=1) == after[:, :6].argmax(axis=1)).all()
                     and (before[:, 6:].argmax(axis=1) == after[:, 6:].argmax(axis=1)).all())
        ok = norm_gap < 1e-6 and argmax_ok
        return ok, (f"frozen branch bit-identical; post-alignment norm gap {norm_gap:.2e}; "
                    f"per-group argmax stable on 1000 inputs: {argmax_ok}")

    record(4, "freezing and weight-alignment invariants", body)


def test_criterion_5_rehearsal_mixing_direction(desk_ablation):
    def body():
        last = {m: np.array([r.summary.last_top1_compact for r in desk_ablation[m]])
                for m in AUG_MODES}
        avg = {m: float(np.mean([r.summary.avg_top1_compact for r in desk_ablation[m]]))
               for m in AUG_MODES}
        wins = int((last["r_cutmix"] > last["none"]).sum())
        gap = float((last["r_cutmix"] - last["none"]).mean())
        ok = (wins >= 4 and gap > 0
              and avg["r_cutmix"] >= avg["cutmix"] and avg["r_mixup"] >= avg["mixup"])
        return ok, (f"r_cutmix beats none on {wins}/5 seeds, mean last-step gap "
                    f"{100 * gap:+.2f}pts; seed-mean Avg r_cutmix {100 * avg['r_cutmix']:.2f} "
                    f"vs cutmix {100 * avg['cutmix']:.2f}, r_mixup {100 * avg['r_mixup']:.2f} "
                    f"vs mixup {100 * avg['mixup']:.2f}")

    record(5, "rehearsal mixing improves the compressed model", body)


def test_criterion_6_compression_fidelity(desk_ablation):
    def body():
        worst = 0.0
        params_ok = True
        for run in desk_ablation["r_cutmix"]:
            gaps = [abs(s.top1_big - s.top1_compact) for s in run.summary.steps]
            worst = max(worst, max(gaps))
            counts = {s.params_extractor for s in run.summary.steps}
            params_ok = params_ok and len(counts) == 1
        ok = worst <= 0.06 and params_ok
        return ok, (f"max |big - compact| gap {100 * worst:.2f}pts (bound 6.00); "
                    f"extractor parameter count constant: {params_ok}")

    record(6, "compression stays within 6 points of the wide model", body)


def test_criterion_7_epoch_time_overhead(desk_ablation):
    def body():
        steps = sorted(desk_ablation["none"][0].step_epoch_times)
        ratios = []
        for t in steps:
            base = np.mean([r.step_epoch_times[t] for r in desk_ablation["none"]])
            rcm = np.mean([r.step_epoch_times[t] for r in desk_ablation["r_cutmix"]])
            ratios.append(rcm / base)
        center = float(np.mean(ratios))
        spread = max(abs(r - center) for r in ratios)
        ok = max(ratios) <= 1.5 and spread <= 0.10 * center
        return ok, (f"per-step overhead {['%.2fx' % r for r in ratios]}, "
                    f"flatness {spread / center:.1%} of mean (bound 10%)")

    record(7, "rehearsal-cutmix epoch overhead small and flat", body)


TINY_CONFIG = """\
run.seed = 3
dataset.kind = "synth"
dataset.seed = 1
dataset.num_classes = 4
dataset.per_class = 24
dataset.test_per_class = 8
dataset.image_side = 12
protocol.name = "B0"
protocol.steps = 2
memory.mode = "total"
memory.value = 16
backbone.width = 4
backbone.blocks_per_stage = 1
train.epochs_expand = 4
train.epochs_compress = 4
train.base_lr = 0.05
train.batch_size = 32
train.crop_flip = false
"""


def test_criterion_8_determinism(tmp_path):
    def body():
        cfg = tmp_path / "tiny.toml"
        cfg.write_text(TINY_CONFIG)
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert cli_main(["run", "--config", str(cfg), "--out", str(out)]) == 0
            outs.append(out)
        compared = []
        for fname in sorted(os.listdir(outs[0])):
            if fname == "timings.csv":  # wall clock, legitimately varies
                continue
            a = (outs[0] / fname).read_bytes()
            b = (outs[1] / fname).read_bytes()
            if a != b:
                return False, f"{fname} differs between identical runs"
            compared.append(fname)
        ckpts = [f for f in compared if f.startswith(("ckpt_", "memory_"))]
        ok = "metrics.csv" in compared and len(ckpts) >= 4
        return ok, f"{len(compared)} artifacts byte-identical incl. {len(ckpts)} checkpoints"

    record(8, "identical config and seed give identical bytes", body)


def test_criterion_9_format_round_trips(tmp_path):
    def body():
        train, test = synth_gaussians(num_classes=3, per_class=24, image_side=12,
                                      seed=9, test_per_class=8)
        config = TrainConfig(epochs_expand=4, epochs_compress=4, batch_size=32,
                             base_lr=0.05, crop_flip=False)
        norm = channel_stats(train.images)
        net = train_first_task(train, [0, 1, 2], BackboneConfig(4, 1, 1), config,
                               _rng(1, 1, 0), _rng(1, 1, 1), norm=norm)
        path = tmp_path / "model.ckpt"
        save_compact(str(path), net)
        loaded, _ = load_compact(str(path))
        before, after = evaluate(net, test, norm), evaluate(loaded, test, norm)
        if before != after:
            return False, f"accuracy changed across save/load: {before} vs {after}"

        cifar = tmp_path / "train.bin"
        cifar.write_bytes(b"\x00" * (3073 * 2))  # CIFAR-10-shaped records
        try:
            load_cifar_binary(str(cifar))
            return False, "malformed CIFAR record length was accepted"
        except DatasetError as e:
            if "CIFAR-10 layout" not in str(e):
                return False, f"CIFAR diagnostic lacks the layout hint: {e}"

        idx = tmp_path / "train-images-idx3-ubyte"
        idx.write_bytes(struct.pack(">IIII", 0xDEAD, 1, 2, 2) + b"\x00" * 4)
        try:
            load_idx(str(idx))
            return False, "bad IDX magic was accepted"
        except DatasetError as e:
            if "bad magic" not in str(e):
                return False, f"IDX diagnostic lacks the magic value: {e}"
        return True, (f"eval exact across round-trip (top1 {before[0]:.4f}); malformed "
                      f"CIFAR and IDX fixtures rejected with diagnostics")

    record(9, "checkpoint round-trip exact; loaders reject bad fixtures", body)
