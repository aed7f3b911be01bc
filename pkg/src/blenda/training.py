"""Training loops: adversarial pretraining and the blended fine-tune stage.

One optimizer step consumes a blended sample (supervised loss + adversarial
term) and a second adversarial sample: the source/target pixel mix with soft
label delta in ``mixed`` mode, or the raw target with hard label 1 in
``hard`` mode (the blended sample then carries hard label 0). The gradient
reversal layer sits between the pooled query features and each
discriminator, so a single backward pass descends the discriminators'
cross-entropy while ascending it through the detector.

All loops are single-threaded and deterministic given the config seed: the
per-iteration pairing RNG is derived statelessly from (seed, tag, iteration),
which also makes checkpoint resume exact.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import RunConfig
from .dataset import (
    Annotation,
    BlendedSample,
    SourceTargetMixSample,
    TrainingSet,
    pair_for_iteration,
)
from .evaluation import evaluate
from .losses import LossWeights, domain_bce, supervised_loss, total_loss
from .model import (
    DETECTOR_KEYS,
    LEVELS,
    discriminator_forward,
    discriminator_keys,
    detector_forward,
    image_to_patches,
    init_detector_params,
    init_discriminator_params,
    query_features,
)
from .optim import adamw_init, adamw_step, load_arrays, save_arrays
from .schedule import compute_delta, compute_gamma

METRICS_HEADER = "epoch,l_sup,l_sp,l_ch,l_ins,delta,map"


class TrainingDivergedError(RuntimeError):
    """A loss term went non-finite; the offending term is named."""


class CheckpointMismatchError(RuntimeError):
    """Checkpoint parameter shapes do not match the configured model."""


@dataclass
class TrainState:
    params: Dict[str, np.ndarray]
    opt: dict
    iteration: int = 0


def init_state(cfg: RunConfig, seed: int) -> TrainState:
    rng = np.random.default_rng([seed, 3])
    params = init_detector_params(cfg.model, rng)
    params.update(init_discriminator_params(cfg.model, rng))
    return TrainState(params=params, opt=adamw_init(params), iteration=0)


def save_state(state: TrainState, path: Union[str, Path]) -> None:
    arrays: Dict[str, np.ndarray] = dict(state.params)
    for key, arr in state.opt["m"].items():
        arrays[f"opt.m.{key}"] = arr
    for key, arr in state.opt["v"].items():
        arrays[f"opt.v.{key}"] = arr
    arrays["meta.step"] = np.float64(state.opt["step"])
    arrays["meta.iteration"] = np.float64(state.iteration)
    save_arrays(arrays, path)


def load_state(path: Union[str, Path], cfg: RunConfig) -> TrainState:
    arrays = load_arrays(path)
    reference = init_state(cfg, seed=0)
    params, m, v = {}, {}, {}
    for key, ref in reference.params.items():
        if key not in arrays:
            raise CheckpointMismatchError(f"{path}: missing parameter {key!r}")
        if arrays[key].shape != ref.shape:
            raise CheckpointMismatchError(
                f"{path}: parameter {key!r} has shape {arrays[key].shape}, "
                f"expected {ref.shape}"
            )
        params[key] = arrays[key]
        m[key] = arrays.get(f"opt.m.{key}", np.zeros_like(ref))
        v[key] = arrays.get(f"opt.v.{key}", np.zeros_like(ref))
    opt = {"step": int(arrays.get("meta.step", 0.0)), "m": m, "v": v}
    iteration = int(arrays.get("meta.iteration", 0.0))
    return TrainState(params=params, opt=opt, iteration=iteration)


def _check_finite(name: str, value: float) -> float:
    if not math.isfinite(value):
        raise TrainingDivergedError(f"loss term {name!r} is non-finite ({value})")
    return value


def active_levels(weights: LossWeights) -> List[str]:
    return [lvl for lvl in LEVELS if weights[lvl] > 0.0]


def _adversarial_terms(
    leaves: Dict[str, Tensor],
    adv_inputs,
    levels: Sequence[str],
    cfg: RunConfig,
    use_grl: bool = True,
) -> Dict[str, Tensor]:
    per_level: Dict[str, List[Tensor]] = {lvl: [] for lvl in levels}
    for feats, logits, d in adv_inputs:
        queries = query_features(feats, logits, cfg.model)
        for lvl in levels:
            q = ad.grl(queries[lvl]) if use_grl else queries[lvl]
            disc_out = discriminator_forward(leaves, lvl, q)
            per_level[lvl].append(domain_bce(d, disc_out))
    return {
        lvl: ad.mul(1.0 / len(terms), _sum_tensors(terms))
        for lvl, terms in per_level.items()
    }


def _sum_tensors(terms: Sequence[Tensor]) -> Tensor:
    out = terms[0]
    for t in terms[1:]:
        out = ad.add(out, t)
    return out


def _build_losses(
    leaves: Dict[str, Tensor],
    blended: BlendedSample,
    st_mix: SourceTargetMixSample,
    cfg: RunConfig,
    use_grl: bool = True,
):
    mcfg = cfg.model
    feats_b, logits_b = detector_forward(leaves, image_to_patches(blended.image, mcfg))
    l_sup = supervised_loss(logits_b, blended.annotations, mcfg)
    levels = active_levels(cfg.loss_weights)
    level_terms: Dict[str, Tensor] = {}
    if levels:
        if cfg.train.adversarial_mode == "mixed":
            # both samples carry the soft label delta
            feats_2, logits_2 = detector_forward(
                leaves, image_to_patches(st_mix.image, mcfg)
            )
            adv_inputs = [
                (feats_b, logits_b, blended.domain_label),
                (feats_2, logits_2, st_mix.domain_label),
            ]
        else:
            # hard labels: blended counts as source (0), raw target as 1
            feats_2, logits_2 = detector_forward(
                leaves, image_to_patches(st_mix.target_image, mcfg)
            )
            adv_inputs = [(feats_b, logits_b, 0.0), (feats_2, logits_2, 1.0)]
        level_terms = _adversarial_terms(leaves, adv_inputs, levels, cfg, use_grl)
    zero = Tensor(0.0)
    l_sp = level_terms.get("sp", zero)
    l_ch = level_terms.get("ch", zero)
    l_ins = level_terms.get("ins", zero)
    total = total_loss(l_sup, l_sp, l_ch, l_ins, cfg.loss_weights)
    return total, {"l_sup": l_sup, "l_sp": l_sp, "l_ch": l_ch, "l_ins": l_ins}


def train_step(
    state: TrainState,
    blended: BlendedSample,
    st_mix: SourceTargetMixSample,
    delta: float,
    cfg: RunConfig,
) -> Dict[str, float]:
    """One optimizer step; returns the scalar loss terms.

    Parameters outside the current objective (discriminators whose level
    weight is zero) are left untouched, so a run with all lambdas zero is
    pure supervised fine-tuning on blended images.
    """
    if blended.domain_label != delta or st_mix.domain_label != delta:
        raise ValueError("sample domain labels must equal the step's delta")
    leaves = {k: Tensor(v) for k, v in state.params.items()}
    total, terms = _build_losses(leaves, blended, st_mix, cfg)
    scalars = {name: _check_finite(name, t.item()) for name, t in terms.items()}
    scalars["total"] = _check_finite("total", total.item())
    total.backward()

    keys = list(DETECTOR_KEYS)
    for lvl in active_levels(cfg.loss_weights):
        keys.extend(discriminator_keys(lvl))
    grads = {k: leaves[k].grad for k in keys}
    opt = cfg.optimizer
    adamw_step(
        state.params,
        grads,
        state.opt,
        lr=opt.lr,
        weight_decay=opt.weight_decay,
        betas=opt.betas,
        eps=opt.eps,
    )
    return scalars


def adversarial_only_gradients(
    params: Dict[str, np.ndarray],
    blended: BlendedSample,
    st_mix: SourceTargetMixSample,
    cfg: RunConfig,
    use_grl: bool = True,
) -> Dict[str, np.ndarray]:
    """Gradients of the weighted adversarial terms alone (diagnostics)."""
    leaves = {k: Tensor(v) for k, v in params.items()}
    mcfg = cfg.model
    feats_b, logits_b = detector_forward(leaves, image_to_patches(blended.image, mcfg))
    levels = active_levels(cfg.loss_weights)
    if cfg.train.adversarial_mode == "mixed":
        feats_2, logits_2 = detector_forward(leaves, image_to_patches(st_mix.image, mcfg))
        adv_inputs = [
            (feats_b, logits_b, blended.domain_label),
            (feats_2, logits_2, st_mix.domain_label),
        ]
    else:
        feats_2, logits_2 = detector_forward(
            leaves, image_to_patches(st_mix.target_image, mcfg)
        )
        adv_inputs = [(feats_b, logits_b, 0.0), (feats_2, logits_2, 1.0)]
    terms = _adversarial_terms(leaves, adv_inputs, levels, cfg, use_grl)
    weighted = [ad.mul(cfg.loss_weights[lvl], terms[lvl]) for lvl in levels]
    _sum_tensors(weighted).backward()
    return {k: leaves[k].grad.copy() for k in leaves}


def _epoch_boundaries(n_iterations: int, epochs: int) -> List[int]:
    epochs = min(epochs, n_iterations)
    return [(e + 1) * n_iterations // epochs for e in range(epochs)]


def _format_row(epoch: int, means: Dict[str, float], delta: float, map_score: float) -> str:
    return (
        f"{epoch},{means['l_sup']:.10g},{means['l_sp']:.10g},{means['l_ch']:.10g},"
        f"{means['l_ins']:.10g},{delta:.10g},{map_score:.10g}"
    )


def run_training(
    state: TrainState,
    cfg: RunConfig,
    training_set: TrainingSet,
    n_iterations: int,
    delta_fn: Callable[[int], float],
    rng_tag: int,
    eval_images: Sequence[np.ndarray],
    eval_annotations: Sequence[Sequence[Annotation]],
    out_dir: Optional[Union[str, Path]] = None,
    checkpoint_name: str = "model",
) -> List[str]:
    """Shared iteration loop; returns metrics CSV rows (one per epoch).

    Starts at ``state.iteration`` so resuming from an epoch-boundary
    checkpoint reproduces the uninterrupted trajectory. Writes
    ``metrics.csv``, ``<name>.ckpt`` (final) and ``<name>.best.ckpt`` under
    ``out_dir`` when given.
    """
    boundaries = _epoch_boundaries(n_iterations, cfg.train.epochs)
    rows: List[str] = []
    accum = {k: 0.0 for k in ("l_sup", "l_sp", "l_ch", "l_ins")}
    count = 0
    best_map = -1.0
    delta = 0.0
    out_dir = Path(out_dir) if out_dir is not None else None

    for it in range(state.iteration, n_iterations):
        delta = delta_fn(it)
        rng = np.random.default_rng([cfg.train.seed, rng_tag, it])
        blended, st_mix = pair_for_iteration(training_set, delta, rng)
        scalars = train_step(state, blended, st_mix, delta, cfg)
        for key in accum:
            accum[key] += scalars[key]
        count += 1
        state.iteration = it + 1
        if state.iteration in boundaries:
            epoch = boundaries.index(state.iteration) + 1
            means = {k: v / max(count, 1) for k, v in accum.items()}
            result = evaluate(state.params, eval_images, eval_annotations, cfg.model)
            rows.append(_format_row(epoch, means, delta, result["map"]))
            accum = {k: 0.0 for k in accum}
            count = 0
            if out_dir is not None:
                save_state(state, out_dir / f"{checkpoint_name}.ckpt")
                if result["map"] > best_map:
                    best_map = result["map"]
                    save_state(state, out_dir / f"{checkpoint_name}.best.ckpt")

    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "metrics.csv").write_text(
            METRICS_HEADER + "\n" + "".join(row + "\n" for row in rows)
        )
        save_state(state, out_dir / f"{checkpoint_name}.ckpt")
    return rows


def pretrain(
    cfg: RunConfig,
    training_set: TrainingSet,
    eval_images: Sequence[np.ndarray],
    eval_annotations: Sequence[Sequence[Annotation]],
    out_dir: Optional[Union[str, Path]] = None,
) -> TrainState:
    """Hard-label adversarial training on raw source and target images."""
    hard_cfg = cfg.replace(
        train=dataclasses.replace(
            cfg.train, static_delta=0.0, adversarial_mode="hard"
        )
    )
    state = init_state(cfg, cfg.train.seed)
    run_training(
        state,
        hard_cfg,
        training_set,
        n_iterations=cfg.train.pretrain_iterations,
        delta_fn=lambda it: 0.0,
        rng_tag=11,
        eval_images=eval_images,
        eval_annotations=eval_annotations,
        out_dir=out_dir,
        checkpoint_name="pretrain",
    )
    state.iteration = 0  # fine-tuning restarts the schedule clock
    return state


def finetune_blenda(
    state: TrainState,
    cfg: RunConfig,
    training_set: TrainingSet,
    eval_images: Sequence[np.ndarray],
    eval_annotations: Sequence[Sequence[Annotation]],
    out_dir: Optional[Union[str, Path]] = None,
) -> TrainState:
    """The blended fine-tune loop with dynamic (or static-ablation) delta."""
    n = cfg.schedule.total_iterations
    if cfg.train.static_delta is not None:
        static = cfg.train.static_delta
        delta_fn: Callable[[int], float] = lambda it: static
    else:
        delta_fn = lambda it: compute_delta(compute_gamma(it, n), cfg.schedule)
    run_training(
        state,
        cfg,
        training_set,
        n_iterations=n,
        delta_fn=delta_fn,
        rng_tag=7,
        eval_images=eval_images,
        eval_annotations=eval_annotations,
        out_dir=out_dir,
        checkpoint_name="finetune",
    )
    return state
