"""Command-line entry point.

Commands: schedule | generate | translate | blend | pretrain | finetune |
eval | ablate. One JSON config file drives everything; ``--seed`` overrides
the training seed and every command writes its resolved config next to its
outputs under a timestamped run directory (``--run-name`` pins the name for
reproducible comparisons). ``BLENDA_WORKERS`` bounds ablation parallelism.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import statistics
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from .config import ConfigError, RunConfig, load_config, write_resolved_config
from .dataset import (
    BenchmarkSpec,
    SampleRecord,
    generate_benchmark,
    load_target_annotations,
    load_training_set,
    read_annotations,
    write_manifest,
)
from .imaging import (
    FogParams,
    ImageIOError,
    blend_images,
    fog_translate,
    read_image,
    write_image,
)
from .schedule import emit_schedule_curve, write_schedule_csv
from .training import (
    TrainState,
    TrainingDivergedError,
    finetune_blenda,
    init_state,
    load_state,
    pretrain,
    run_training,
    save_state,
)
from .evaluation import evaluate


class CliError(RuntimeError):
    pass


def _make_run_dir(out: str, command: str, run_name: Optional[str]) -> Path:
    name = run_name or f"{command}-{time.strftime('%Y%m%d-%H%M%S')}"
    run_dir = Path(out) / name
    run_dir.mkdir(parents=True, exist_ok=True)
    return run_dir


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.replace(train=dataclasses.replace(cfg.train, seed=args.seed))
    return cfg


def _dataset_root(cfg: RunConfig, run_dir: Path) -> Path:
    if cfg.paths.dataset_root:
        root = Path(cfg.paths.dataset_root)
        if not root.exists():
            raise CliError(f"dataset root does not exist: {root}")
        return root
    raise CliError("config paths.dataset_root is required for this command")


def _benchmark_spec(cfg: RunConfig) -> BenchmarkSpec:
    d = cfg.dataset
    return BenchmarkSpec(
        image_size=d.image_size,
        grid_size=d.grid_size,
        num_classes=d.num_classes,
        min_objects=d.min_objects,
        max_objects=d.max_objects,
    )


def _load_eval_data(root: Path):
    ts = load_training_set(root)
    return ts, ts.target_images, load_target_annotations(root)


def cmd_schedule(cfg: RunConfig, run_dir: Path, args) -> None:
    curve = emit_schedule_curve(cfg.schedule, cfg.schedule_curve_samples)
    with open(run_dir / "schedule_curve.csv", "w") as fh:
        write_schedule_csv(curve, fh)
    print(f"wrote {run_dir / 'schedule_curve.csv'}")


def cmd_generate(cfg: RunConfig, run_dir: Path, args) -> None:
    root = Path(cfg.paths.dataset_root) if cfg.paths.dataset_root else run_dir / "dataset"
    paths = generate_benchmark(
        root,
        _benchmark_spec(cfg),
        count=cfg.dataset.num_source,
        fog=cfg.fog,
        seed=cfg.train.seed,
        target_count=cfg.dataset.num_target,
        target_fog=cfg.target_fog,
    )
    print(
        f"generated {len(paths['source'])} source, {len(paths['translated'])} "
        f"translated, {len(paths['target'])} target scenes under {root}"
    )


def cmd_translate(cfg: RunConfig, run_dir: Path, args) -> None:
    root = _dataset_root(cfg, run_dir)
    sources = sorted(
        p for p in (root / "train").glob("scene_*.png") if ".translated" not in p.name
    )
    if not sources:
        raise CliError(f"no source scenes under {root / 'train'}")
    for i, src in enumerate(sources):
        fog = FogParams(
            cfg.fog.fog_strength,
            cfg.fog.veil_luminance,
            cfg.fog.noise_sigma,
            cfg.fog.seed + 2 * i,
        )
        out = fog_translate(read_image(src), fog)
        write_image(out, src.with_name(src.stem + ".translated.png"))
    print(f"translated {len(sources)} images under {root / 'train'}")


def cmd_blend(cfg: RunConfig, run_dir: Path, args) -> None:
    root = _dataset_root(cfg, run_dir)
    delta = args.delta
    if delta is None or not (0.0 <= delta <= 1.0):
        raise CliError("--delta in [0, 1] is required for blend")
    sources = sorted(
        p for p in (root / "train").glob("scene_*.png") if ".translated" not in p.name
    )
    records: List[SampleRecord] = []
    for src in sources:
        translated = src.with_name(src.stem + ".translated.png")
        blended = blend_images(read_image(src), read_image(translated), delta)
        blended_path = src.with_name(src.stem + ".blended.png")
        write_image(blended, blended_path)
        records.append(
            SampleRecord(
                source_path=str(src),
                translated_path=str(translated),
                blended_path=str(blended_path),
                annotations=read_annotations(src.with_suffix(".anno")),
                domain_label=delta,
                delta_at_creation=delta,
                role="blended",
            )
        )
    manifest = run_dir / "blended_manifest.jsonl"
    write_manifest(records, manifest)
    print(f"blended {len(records)} images at delta={delta}; manifest {manifest}")


def cmd_pretrain(cfg: RunConfig, run_dir: Path, args) -> None:
    root = _dataset_root(cfg, run_dir)
    ts, eval_images, eval_annos = _load_eval_data(root)
    state = pretrain(cfg, ts, eval_images, eval_annos, out_dir=run_dir)
    result = evaluate(state.params, eval_images, eval_annos, cfg.model)
    print(f"pretrain done: target mAP {result['map']:.4f}; checkpoint {run_dir / 'pretrain.ckpt'}")


def cmd_finetune(cfg: RunConfig, run_dir: Path, args) -> None:
    root = _dataset_root(cfg, run_dir)
    ts, eval_images, eval_annos = _load_eval_data(root)
    if args.checkpoint:
        state = load_state(args.checkpoint, cfg)
    else:
        raise CliError("--checkpoint is required for finetune")
    state = finetune_blenda(state, cfg, ts, eval_images, eval_annos, out_dir=run_dir)
    result = evaluate(state.params, eval_images, eval_annos, cfg.model)
    print(f"finetune done: target mAP {result['map']:.4f}; checkpoint {run_dir / 'finetune.ckpt'}")


def cmd_eval(cfg: RunConfig, run_dir: Path, args) -> None:
    root = _dataset_root(cfg, run_dir)
    if not args.checkpoint:
        raise CliError("--checkpoint is required for eval")
    state = load_state(args.checkpoint, cfg)
    _, eval_images, eval_annos = _load_eval_data(root)
    result = evaluate(state.params, eval_images, eval_annos, cfg.model)
    payload = {"map": result["map"], "ap": result["ap"]}
    (run_dir / "eval.json").write_text(json.dumps(payload, indent=2) + "\n")
    print(json.dumps(payload))


# ---------------------------------------------------------------------------
# ablation harness
# ---------------------------------------------------------------------------

def clone_state(state: TrainState) -> TrainState:
    return TrainState(
        params={k: v.copy() for k, v in state.params.items()},
        opt={
            "step": state.opt["step"],
            "m": {k: v.copy() for k, v in state.opt["m"].items()},
            "v": {k: v.copy() for k, v in state.opt["v"].items()},
        },
        iteration=state.iteration,
    )


def ablation_rows(cfg: RunConfig) -> List[Tuple[str, str]]:
    """The 8 (delta setting, adversarial mode) configuration rows."""
    settings = [f"static_{d:g}" for d in cfg.ablation.static_deltas] + ["dynamic"]
    return [(setting, mode) for setting in settings for mode in ("hard", "mixed")]


def _config_for(cfg: RunConfig, setting: str, mode: str, seed: int) -> RunConfig:
    train = dataclasses.replace(
        cfg.train,
        seed=seed,
        adversarial_mode=mode,
        static_delta=None if setting == "dynamic" else float(setting.split("_", 1)[1]),
    )
    return cfg.replace(train=train)


def run_ablation_seed(
    cfg: RunConfig, dataset_root: Path, seed: int, seed_dir: Path
) -> Dict[Tuple[str, str], float]:
    """All runs for one seed: shared pretrain, source-only baseline, and the
    8 adversarial configuration rows."""
    ts, eval_images, eval_annos = _load_eval_data(dataset_root)
    results: Dict[Tuple[str, str], float] = {}

    # source-only baseline: fresh init, supervised only, clean source data
    so_cfg = cfg.replace(
        train=dataclasses.replace(
            cfg.train, seed=seed, adversarial_mode="hard", static_delta=0.0
        ),
        loss_weights=dataclasses.replace(
            cfg.loss_weights, lambda_sp=0.0, lambda_ch=0.0, lambda_ins=0.0
        ),
    )
    so_state = init_state(so_cfg, seed)
    run_training(
        so_state,
        so_cfg,
        ts,
        n_iterations=cfg.train.pretrain_iterations + cfg.schedule.total_iterations,
        delta_fn=lambda it: 0.0,
        rng_tag=13,
        eval_images=eval_images,
        eval_annotations=eval_annos,
        out_dir=seed_dir / "source_only",
        checkpoint_name="source_only",
    )
    results[("source_only", "-")] = evaluate(
        so_state.params, eval_images, eval_annos, cfg.model
    )["map"]

    pre_cfg = cfg.replace(train=dataclasses.replace(cfg.train, seed=seed))
    pretrained = pretrain(
        pre_cfg, ts, eval_images, eval_annos, out_dir=seed_dir / "pretrain"
    )

    for setting, mode in ablation_rows(cfg):
        run_cfg = _config_for(cfg, setting, mode, seed)
        state = clone_state(pretrained)
        finetune_blenda(
            state,
            run_cfg,
            ts,
            eval_images,
            eval_annos,
            out_dir=seed_dir / f"{setting}_{mode}",
        )
        results[(setting, mode)] = evaluate(
            state.params, eval_images, eval_annos, cfg.model
        )["map"]
    return results


def _ablation_worker(payload):
    cfg, dataset_root, seed, seed_dir = payload
    return seed, run_ablation_seed(cfg, Path(dataset_root), seed, Path(seed_dir))


def cmd_ablate(cfg: RunConfig, run_dir: Path, args) -> None:
    if cfg.paths.dataset_root:
        dataset_root = Path(cfg.paths.dataset_root)
        if not dataset_root.exists():
            raise CliError(f"dataset root does not exist: {dataset_root}")
    else:
        dataset_root = run_dir / "dataset"
        generate_benchmark(
            dataset_root,
            _benchmark_spec(cfg),
            count=cfg.dataset.num_source,
            fog=cfg.fog,
            seed=cfg.train.seed,
            target_count=cfg.dataset.num_target,
            target_fog=cfg.target_fog,
        )

    seeds = [cfg.train.seed + s for s in range(cfg.ablation.seeds)]
    jobs = [
        (cfg, str(dataset_root), seed, str(run_dir / f"seed_{seed}")) for seed in seeds
    ]
    workers = int(os.environ.get("BLENDA_WORKERS", "0")) or min(len(jobs), os.cpu_count() or 1)
    results: Dict[int, Dict[Tuple[str, str], float]] = {}
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for seed, res in pool.map(_ablation_worker, jobs):
                results[seed] = res
    else:
        for job in jobs:
            seed, res = _ablation_worker(job)
            results[seed] = res

    rows = [("source_only", "-")] + ablation_rows(cfg)
    lines = ["config,mode," + ",".join(f"seed_{s}" for s in seeds) + ",median"]
    for setting, mode in rows:
        values = [results[s][(setting, mode)] for s in seeds]
        med = statistics.median(values)
        lines.append(
            f"{setting},{mode},"
            + ",".join(f"{v:.10g}" for v in values)
            + f",{med:.10g}"
        )
    summary = run_dir / "ablation_summary.csv"
    summary.write_text("\n".join(lines) + "\n")
    print(summary.read_text(), end="")
    print(f"summary written to {summary}")


COMMANDS = {
    "schedule": cmd_schedule,
    "generate": cmd_generate,
    "translate": cmd_translate,
    "blend": cmd_blend,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="blenda",
        description="Intermediate-domain blending for adversarial domain adaptation",
    )
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", type=Path, default=None, help="JSON config file")
    parser.add_argument("--seed", type=int, default=None, help="override training seed")
    parser.add_argument("--out", type=str, default="runs", help="output directory")
    parser.add_argument("--run-name", type=str, default=None, help="fixed run dir name")
    parser.add_argument("--delta", type=float, default=None, help="mixing weight (blend)")
    parser.add_argument("--checkpoint", type=Path, default=None, help="checkpoint path")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _resolve_config(args)
        run_dir = _make_run_dir(args.out, args.command, args.run_name)
        write_resolved_config(cfg, run_dir / "config.resolved.json")
        COMMANDS[args.command](cfg, run_dir, args)
    except (
        CliError,
        ConfigError,
        ImageIOError,
        TrainingDivergedError,
        FileNotFoundError,
        ValueError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
