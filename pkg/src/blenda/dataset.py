"""Synthetic grid-detection benchmark and blended-sample bookkeeping.

A scene is a square image divided into grid_size x grid_size cells; a subset
of cells contains one colored object each (class determined by color/shape).
The benchmark ships three sets:

    source:     clean scenes with annotations (``scene_NNNN.png`` + ``.anno``)
    translated: fog-corrupted copy of each source (``scene_NNNN.translated.png``)
    target:     fog-corrupted, independently generated scenes whose
                annotations are held out for evaluation only

Annotations are sidecar ``.anno`` files, one ``row col class_id`` triple per
line. Manifests are line-delimited JSON records with a schema-version header.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .imaging import FogParams, blend_images, blend_source_target, fog_translate, read_image, write_image

MANIFEST_SCHEMA_VERSION = 1

# class_id -> base RGB; shapes below keep classes separable even under fog
CLASS_COLORS = (
    (0.85, 0.15, 0.15),
    (0.15, 0.8, 0.2),
    (0.15, 0.3, 0.9),
    (0.9, 0.8, 0.15),
    (0.75, 0.2, 0.8),
)


class ManifestError(ValueError):
    """Schema mismatch or missing referenced files in a manifest."""


@dataclass(frozen=True)
class Annotation:
    cell_row: int
    cell_col: int
    class_id: int


@dataclass(frozen=True)
class SceneSpec:
    """One concrete scene: grid layout plus the objects placed in it."""

    image_size: int
    grid_size: int
    num_classes: int
    objects: Tuple[Tuple[int, int, int], ...]  # (cell_row, cell_col, class_id)
    background_seed: int

    def __post_init__(self) -> None:
        if self.image_size % self.grid_size != 0:
            raise ValueError(
                f"image_size {self.image_size} not divisible by grid_size {self.grid_size}"
            )
        if self.num_classes < 2 or self.num_classes > len(CLASS_COLORS):
            raise ValueError(f"num_classes must be in [2, {len(CLASS_COLORS)}]")
        cells = set()
        for row, col, cls in self.objects:
            if not (0 <= row < self.grid_size and 0 <= col < self.grid_size):
                raise ValueError(f"object cell ({row}, {col}) outside the grid")
            if not (0 <= cls < self.num_classes):
                raise ValueError(f"class_id {cls} out of range")
            if (row, col) in cells:
                raise ValueError(f"more than one object in cell ({row}, {col})")
            cells.add((row, col))


@dataclass(frozen=True)
class BenchmarkSpec:
    """Template for randomized scenes of a benchmark."""

    image_size: int = 32
    grid_size: int = 4
    num_classes: int = 3
    min_objects: int = 3
    max_objects: int = 6


@dataclass
class SampleRecord:
    """One manifest entry: file references, labels, and provenance."""

    source_path: str
    translated_path: str
    annotations: List[Annotation]
    domain_label: float
    delta_at_creation: float
    role: str  # source | translated | blended | target | source_target_mix
    blended_path: Optional[str] = None

    _ROLES = ("source", "translated", "blended", "target", "source_target_mix")

    def __post_init__(self) -> None:
        if self.role not in self._ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        if self.role in ("blended", "source_target_mix"):
            if self.domain_label != self.delta_at_creation:
                raise ValueError(
                    "blended/source_target_mix records must carry "
                    "domain_label == delta_at_creation"
                )
        elif self.role == "source" and self.domain_label != 0.0:
            raise ValueError("pure source records must carry domain_label 0")
        elif self.role == "target" and self.domain_label != 1.0:
            raise ValueError("pure target records must carry domain_label 1")


def random_scene(spec: BenchmarkSpec, rng: np.random.Generator, background_seed: int) -> SceneSpec:
    n_objects = int(rng.integers(spec.min_objects, spec.max_objects + 1))
    cells = [
        (int(c) // spec.grid_size, int(c) % spec.grid_size)
        for c in rng.choice(spec.grid_size**2, size=n_objects, replace=False)
    ]
    objects = tuple(
        (row, col, int(rng.integers(0, spec.num_classes))) for row, col in cells
    )
    return SceneSpec(
        spec.image_size, spec.grid_size, spec.num_classes, objects, background_seed
    )


def render_scene(scene: SceneSpec) -> Tuple[np.ndarray, List[Annotation]]:
    """Rasterize a scene; deterministic given the scene's background_seed."""
    rng = np.random.default_rng(scene.background_seed)
    size, cell = scene.image_size, scene.image_size // scene.grid_size
    base = rng.uniform(0.30, 0.55)
    img = np.empty((size, size, 3), dtype=np.float64)
    img[...] = base + rng.uniform(-0.05, 0.05, size=3)
    img += rng.normal(0.0, 0.03, size=img.shape)

    yy, xx = np.mgrid[0:cell, 0:cell]
    cy = cx = (cell - 1) / 2.0
    for row, col, cls in scene.objects:
        color = np.array(CLASS_COLORS[cls]) + rng.uniform(-0.06, 0.06, size=3)
        radius = cell * rng.uniform(0.28, 0.42)
        if cls % 3 == 0:  # filled square
            mask = (np.abs(yy - cy) <= radius) & (np.abs(xx - cx) <= radius)
        elif cls % 3 == 1:  # disk
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= radius**2
        else:  # diamond
            mask = np.abs(yy - cy) + np.abs(xx - cx) <= radius * 1.3
        patch = img[row * cell : (row + 1) * cell, col * cell : (col + 1) * cell]
        patch[mask] = color
    img = np.clip(img, 0.0, 1.0)
    annos = [Annotation(row, col, cls) for row, col, cls in scene.objects]
    return img, annos


def write_annotations(annotations: Sequence[Annotation], path: Union[str, Path]) -> None:
    lines = [f"{a.cell_row} {a.cell_col} {a.class_id}" for a in annotations]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_annotations(path: Union[str, Path]) -> List[Annotation]:
    out = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        row, col, cls = (int(tok) for tok in line.split())
        out.append(Annotation(row, col, cls))
    return out


def generate_benchmark(
    root: Union[str, Path],
    spec: BenchmarkSpec,
    count: int,
    fog: FogParams,
    seed: int,
    target_count: Optional[int] = None,
    target_fog: Optional[FogParams] = None,
) -> Dict[str, List[Path]]:
    """Build the source/translated/target file sets under ``root``.

    Fully deterministic given ``seed``: per-scene generators are derived from
    (seed, set tag, index), so results do not depend on generation order.
    Target scenes are generated independently of the sources; their
    annotations land in the target directory and are read only by evaluation.

    ``target_fog`` lets the actual target-domain corruption differ from the
    translator's (default: identical). An overshooting translator models the
    loss of discriminative detail in translated imagery.
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    root = Path(root)
    target_count = count if target_count is None else target_count
    target_fog = fog if target_fog is None else target_fog
    paths: Dict[str, List[Path]] = {"source": [], "translated": [], "target": []}

    train_dir = root / "train"
    target_dir = root / "target"
    for i in range(count):
        rng = np.random.default_rng([seed, 0, i])
        scene = random_scene(spec, rng, background_seed=int(rng.integers(2**63)))
        img, annos = render_scene(scene)
        src = train_dir / f"scene_{i:04d}.png"
        write_image(img, src)
        write_annotations(annos, src.with_suffix(".anno"))
        translated = fog_translate(
            img, FogParams(fog.fog_strength, fog.veil_luminance, fog.noise_sigma, fog.seed + 2 * i)
        )
        trans = train_dir / f"scene_{i:04d}.translated.png"
        write_image(translated, trans)
        paths["source"].append(src)
        paths["translated"].append(trans)
    for i in range(target_count):
        rng = np.random.default_rng([seed, 1, i])
        scene = random_scene(spec, rng, background_seed=int(rng.integers(2**63)))
        img, annos = render_scene(scene)
        fogged = fog_translate(
            img,
            FogParams(
                target_fog.fog_strength,
                target_fog.veil_luminance,
                target_fog.noise_sigma,
                target_fog.seed + 2 * i + 1,
            ),
        )
        tgt = target_dir / f"scene_{i:04d}.png"
        write_image(fogged, tgt)
        write_annotations(annos, tgt.with_suffix(".anno"))
        paths["target"].append(tgt)
    return paths


@dataclass
class TrainingSet:
    """In-memory training-side view of a benchmark (no target annotations)."""

    source_images: List[np.ndarray]
    translated_images: List[np.ndarray]
    annotations: List[List[Annotation]]
    target_images: List[np.ndarray]
    source_paths: List[Path] = field(default_factory=list)
    translated_paths: List[Path] = field(default_factory=list)
    target_paths: List[Path] = field(default_factory=list)


def load_training_set(root: Union[str, Path]) -> TrainingSet:
    """Load source/translated pairs and target images (annotations excluded
    for targets; the training loop never reads them)."""
    root = Path(root)
    source_paths = sorted(
        p for p in (root / "train").glob("scene_*.png") if ".translated" not in p.name
    )
    if not source_paths:
        raise FileNotFoundError(f"no source scenes under {root / 'train'}")
    translated_paths = [
        p.with_name(p.stem + ".translated.png") for p in source_paths
    ]
    target_paths = sorted((root / "target").glob("scene_*.png"))
    if not target_paths:
        raise FileNotFoundError(f"no target scenes under {root / 'target'}")
    return TrainingSet(
        source_images=[read_image(p) for p in source_paths],
        translated_images=[read_image(p) for p in translated_paths],
        annotations=[read_annotations(p.with_suffix(".anno")) for p in source_paths],
        target_images=[read_image(p) for p in target_paths],
        source_paths=source_paths,
        translated_paths=translated_paths,
        target_paths=target_paths,
    )


def load_target_annotations(root: Union[str, Path]) -> List[List[Annotation]]:
    """Held-out target ground truth; evaluation only."""
    root = Path(root)
    target_paths = sorted((root / "target").glob("scene_*.png"))
    return [read_annotations(p.with_suffix(".anno")) for p in target_paths]


@dataclass
class BlendedSample:
    """Blended source/translated image inheriting the source's annotations."""

    image: np.ndarray
    annotations: List[Annotation]
    domain_label: float
    source_index: int


@dataclass
class SourceTargetMixSample:
    """Source/target pixel mix (no annotations); keeps the raw target around
    for the hard-label adversarial configuration."""

    image: np.ndarray
    domain_label: float
    source_index: int
    target_index: int
    target_image: np.ndarray


def pair_for_iteration(
    training_set: TrainingSet, delta: float, rng: np.random.Generator
) -> Tuple[BlendedSample, SourceTargetMixSample]:
    """Draw the per-iteration sample pair.

    One source with its paired translated image gives the blended sample; a
    uniformly random target (no structural correspondence to the source)
    gives the source/target mix. Both carry domain_label = delta.
    """
    if not training_set.source_images or not training_set.target_images:
        raise ValueError("source and target sets must be non-empty")
    si = int(rng.integers(len(training_set.source_images)))
    ti = int(rng.integers(len(training_set.target_images)))
    source = training_set.source_images[si]
    blended = BlendedSample(
        image=blend_images(source, training_set.translated_images[si], delta),
        annotations=list(training_set.annotations[si]),
        domain_label=delta,
        source_index=si,
    )
    target = training_set.target_images[ti]
    st_mix = SourceTargetMixSample(
        image=blend_source_target(source, target, delta),
        domain_label=delta,
        source_index=si,
        target_index=ti,
        target_image=target,
    )
    return blended, st_mix


def write_manifest(records: Sequence[SampleRecord], path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(json.dumps({"schema_version": MANIFEST_SCHEMA_VERSION}) + "\n")
        for rec in records:
            payload = asdict(rec)
            payload["annotations"] = [asdict(a) for a in rec.annotations]
            fh.write(json.dumps(payload) + "\n")


def read_manifest(path: Union[str, Path], check_files: bool = True) -> List[SampleRecord]:
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines:
        raise ManifestError(f"{path}: empty manifest")
    header = json.loads(lines[0])
    if header.get("schema_version") != MANIFEST_SCHEMA_VERSION:
        raise ManifestError(
            f"{path}: schema_version {header.get('schema_version')!r} != "
            f"{MANIFEST_SCHEMA_VERSION}"
        )
    records = []
    for line in lines[1:]:
        if not line.strip():
            continue
        payload = json.loads(line)
        payload["annotations"] = [Annotation(**a) for a in payload["annotations"]]
        records.append(SampleRecord(**payload))
    if check_files:
        base = path.parent
        for rec in records:
            refs = [rec.source_path, rec.translated_path]
            if rec.blended_path is not None:
                refs.append(rec.blended_path)
            for ref in refs:
                resolved = Path(ref)
                if not resolved.is_absolute():
                    resolved = base / resolved
                if not resolved.exists():
                    raise ManifestError(f"{path}: missing referenced file {resolved}")
    return records
