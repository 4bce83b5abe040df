"""End-to-end runs: dataset preparation, the training loop, evaluation.

A run is fully determined by its RunConfig.  Two runs with equal
configs produce byte-identical datasets, loss curves, and checkpoints,
which is what makes ablation comparisons meaningful.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .checkpoint import save_checkpoint
from .data import augment, load_dataset, make_dataset
from .metrics import confusion
from .model import BarnetMini
from .optim import new_state, train_step
from .tensor import Tensor, no_grad

__all__ = ["ensure_dataset", "run_training", "predict_mask", "evaluate",
           "eval_threads", "VARIANTS", "run_ablation", "ablation_csv"]


def ensure_dataset(cfg, root=None):
    """Generate cfg's dataset under root unless a manifest already exists."""
    root = Path(root if root is not None else cfg.data_root)
    if not (root / "manifest.txt").exists():
        make_dataset(cfg.scene_config(), cfg.train_count, cfg.test_count,
                     root)
    return root


def run_training(cfg, out_dir, data_root=None, log=None):
    """Train a model per cfg, writing loss.csv, config.txt, model.ckpt.

    Returns a dict with the trained model, the per-step losses, and the
    checkpoint path.  Passing log (a callable taking one string) gives
    progress lines; by default the loop is silent.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    root = ensure_dataset(cfg, data_root)
    train_set = load_dataset(root, "train")

    model = BarnetMini(**cfg.model_kwargs())
    state = new_state(cfg.lr0, seed=cfg.seed,
                      decay_factor=cfg.decay_factor,
                      decay_every=cfg.decay_every)
    rows = ["step,lr,loss"]
    losses = []
    for _ in range(cfg.steps):
        picks = state.rng.integers(0, len(train_set), size=cfg.batch_size)
        batch = []
        for i in picks:
            sample = train_set[int(i)]
            if cfg.augment:
                sample = augment(sample, state.rng)
            batch.append(sample)
        loss = train_step(model, state, batch,
                          alpha=cfg.alpha, smooth=cfg.smooth)
        losses.append(loss)
        rows.append(f"{state.step},{state.lr:.10g},{loss:.10g}")
        if log is not None and (state.step % 50 == 0
                                or state.step == cfg.steps):
            log(f"step {state.step:4d}/{cfg.steps}  "
                f"lr {state.lr:.5f}  loss {loss:.4f}")

    (out / "loss.csv").write_text("\n".join(rows) + "\n")
    (out / "config.txt").write_text(cfg.to_text())
    ckpt = out / "model.ckpt"
    save_checkpoint(ckpt, model.parameters(), model.buffers(),
                    cfg.config_hash())
    return {"model": model, "state": state, "losses": losses,
            "checkpoint": ckpt, "data_root": root}


def predict_mask(model, image):
    """Hard class assignment per pixel from the model's scores."""
    x = image if isinstance(image, Tensor) else Tensor(image)
    with no_grad():
        logits = model.forward(x, training=False)
    return np.argmax(logits.data, axis=0).astype(np.uint8)


def eval_threads():
    """Worker count for evaluation, capped by BARNETKIT_THREADS."""
    raw = os.environ.get("BARNETKIT_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def evaluate(model, samples, num_classes, threads=None):
    """Score a model over samples; returns (EvalReport, predictions).

    Predictions come back in sample order regardless of thread count,
    so reports are deterministic.
    """
    if threads is None:
        threads = eval_threads()
    with no_grad():
        if threads > 1 and len(samples) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                preds = list(pool.map(
                    lambda s: predict_mask(model, s.image), samples))
        else:
            preds = [predict_mask(model, s.image) for s in samples]
    truths = [s.mask for s in samples]
    return confusion(preds, truths, num_classes), preds


# --------------------------------------------------------------------------
# ablation grid

VARIANTS = (
    ("basic", False, False),
    ("basic+bam", True, False),
    ("basic+arf", False, True),
    ("full", True, True),
)


def run_ablation(cfg, out_dir, seeds=(0, 1, 2, 3, 4), log=None):
    """Train and score every model variant across seeds.

    All variants share one dataset (the data fields of cfg are held
    fixed); only the architecture flags and the training seed vary.
    Returns a list of per-variant dicts with per-seed and median
    scores, and writes ablate.csv plus runs.csv under out_dir.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    root = ensure_dataset(cfg)
    test_set = load_dataset(root, "test")

    results = []
    run_rows = ["variant,seed,miou,mdice,final_loss"]
    for name, use_bam, use_arf in VARIANTS:
        mious, mdices = [], []
        params = None
        for seed in seeds:
            variant_cfg = cfg.replace(use_bam=use_bam, use_arf=use_arf,
                                      seed=seed)
            run = run_training(variant_cfg, out / name / f"seed{seed}",
                               data_root=root, log=log)
            model = run["model"]
            if params is None:
                params = sum(p.size for p in model.parameters().values())
            report, _ = evaluate(model, test_set, cfg.num_classes)
            mious.append(report.mean_iou)
            mdices.append(report.mean_dice)
            final_loss = f"{run['losses'][-1]:.6f}" if run["losses"] else ""
            run_rows.append(f"{name},{seed},{report.mean_iou:.6f},"
                            f"{report.mean_dice:.6f},{final_loss}")
            if log is not None:
                log(f"{name} seed {seed}: mIoU {report.mean_iou:.4f}")
        results.append({
            "variant": name, "use_bam": use_bam, "use_arf": use_arf,
            "params": params, "mious": mious, "mdices": mdices,
            "median_miou": float(np.median(mious)),
            "median_mdice": float(np.median(mdices)),
        })

    (out / "ablate.csv").write_text(ablation_csv(results))
    (out / "runs.csv").write_text("\n".join(run_rows) + "\n")
    return results


def ablation_csv(results):
    lines = ["variant,use_bam,use_arf,params,median_miou,median_mdice"]
    for r in results:
        lines.append(f"{r['variant']},{int(r['use_bam'])},"
                     f"{int(r['use_arf'])},{r['params']},"
                     f"{r['median_miou']:.6f},{r['median_mdice']:.6f}")
    return "\n".join(lines) + "\n"
