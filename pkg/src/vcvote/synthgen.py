"""Fully synthetic datasets with exact ground truth.

A scene plants feature-space prototype vectors in constellations around
part centers: an element (prototype, offset, probability) puts the
prototype (plus Gaussian noise) at the cell `part_cell - offset`.  All
other cells draw from a pool of background vectors kept far from every
prototype, so the planted structure is recoverable by construction and any
failure is diagnosable.

Geometry is continuous and scale-free: a scene can be rendered at any
short-edge size, scaling part positions, constellation spacing and boxes
together, which gives multi-scale test sets whose correct detection scale
is known exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .fileio import (FeatureMap, Manifest, ManifestEntry, PartAnnotation,
                     write_annotations, write_feature_map, write_manifest)
from .lattice import LatticeSpec, grid_size_for_image, l0_of, l4_of


@dataclass(frozen=True)
class PartLayout:
    """A part as a constellation of prototype cues."""

    part_id: int
    elements: tuple   # ((prototype id, (dy, dx) cells, fire probability), ...)
    box_size: tuple[float, float] = (96.0, 96.0)   # (h, w) px at training scale

    def __post_init__(self):
        for proto, (dy, dx), prob in self.elements:
            if not (-7 <= dy <= 7 and -7 <= dx <= 7):
                raise ValueError(f"offset {(dy, dx)} outside the reachable grid")
            if not 0.0 <= prob <= 1.0:
                raise ValueError(f"bad firing probability {prob}")

    @property
    def max_offset(self) -> int:
        return max(max(abs(dy), abs(dx)) for _, (dy, dx), _ in self.elements)


@dataclass(frozen=True)
class SynthSpec:
    parts: tuple[PartLayout, ...]
    depth: int = 16
    num_background: int = 16
    noise_sigma: float = 2.0
    background_sigma: float = 2.0
    clutter_rate: float = 0.0            # per-cell chance of a stray prototype
    scale_blur: float = 1.0              # cue fading with sub-cell misalignment
    image_size: tuple[int, int] = (224, 320)
    stride: int = 16
    seed: int = 0
    prototype_radius: float = 100.0
    background_radius: float = 300.0
    min_separation: float = 100.0

    def __post_init__(self):
        if self.noise_sigma < 0 or self.background_sigma < 0:
            raise ValueError("noise levels must be nonnegative")
        if not self.parts:
            raise ValueError("need at least one part layout")

    @property
    def num_prototypes(self) -> int:
        return 1 + max(proto for layout in self.parts
                       for proto, _, _ in layout.elements)

    @property
    def part_ids(self) -> tuple[int, ...]:
        return tuple(sorted(p.part_id for p in self.parts))

    def layout(self, part_id: int) -> PartLayout:
        for p in self.parts:
            if p.part_id == part_id:
                return p
        raise KeyError(part_id)


def _separated_sphere_points(rng, n, depth, radius, min_sep, avoid=None):
    """Random points on a sphere with a minimum pairwise distance, optionally
    also kept min_sep away from `avoid` points."""
    pts = []
    tries = 0
    while len(pts) < n:
        tries += 1
        if tries > 1000 * n:
            raise ValueError("cannot separate prototype vectors; lower min_separation")
        v = rng.normal(size=depth)
        v = v / np.linalg.norm(v) * radius
        ok = all(np.linalg.norm(v - p) >= min_sep for p in pts)
        if ok and avoid is not None:
            ok = all(np.linalg.norm(v - a) >= min_sep for a in avoid)
        if ok:
            pts.append(v)
    return np.array(pts)


def make_vectors(spec: SynthSpec) -> tuple[np.ndarray, np.ndarray]:
    """Prototype and background vectors: prototypes on one sphere, background
    on a sphere far enough out that every background vector is at least
    (background_radius - prototype_radius) from every prototype."""
    rng = np.random.default_rng(spec.seed)
    protos = _separated_sphere_points(rng, spec.num_prototypes, spec.depth,
                                      spec.prototype_radius, spec.min_separation)
    background = _separated_sphere_points(rng, spec.num_background, spec.depth,
                                          spec.background_radius,
                                          spec.min_separation)
    return protos, background


@dataclass(frozen=True)
class PartInstance:
    part_id: int
    object_id: int
    center: tuple[float, float]     # (row, col) px at natural size
    scale: float                    # constellation size relative to training
    fired: tuple                    # per-element firing decisions, fixed per scene


@dataclass(frozen=True)
class SceneGeometry:
    image_id: str
    natural_size: tuple[int, int]
    instances: tuple[PartInstance, ...]

    @property
    def actual_scale(self) -> float:
        """Short edge the image should be resized to so the object appears at
        training size (all instances share one scale by construction)."""
        return min(self.natural_size) / self.instances[0].scale


def _round_half_away(x: float) -> int:
    return int(math.floor(x + 0.5)) if x >= 0 else int(math.ceil(x - 0.5))


def generate_geometry(spec: SynthSpec, image_id: str, rng: np.random.Generator,
                      object_scale: float = 1.0,
                      min_instance_distance: float = 96.0) -> SceneGeometry:
    """Place one instance per part at a random snapped cell center, keeping
    constellations inside the grid at every render scale."""
    h, w = spec.image_size
    base = LatticeSpec(stride=spec.stride, receptive_offset=spec.stride // 2,
                       image_size=(h, w),
                       grid_size=grid_size_for_image((h, w), spec.stride))
    for _restart in range(200):
        instances = []
        placed = []
        ok = True
        for layout in spec.parts:
            margin = (layout.max_offset * object_scale + 1.5) * spec.stride
            lo_r, hi_r = margin, h - 1 - margin
            lo_c, hi_c = margin, w - 1 - margin
            if lo_r >= hi_r or lo_c >= hi_c:
                raise ValueError(f"image {spec.image_size} too small for part "
                                 f"{layout.part_id} at scale {object_scale}")
            for _try in range(200):
                q = (float(rng.uniform(lo_r, hi_r)), float(rng.uniform(lo_c, hi_c)))
                center = tuple(float(v) for v in l0_of(l4_of(q, base), base))
                if all(math.hypot(center[0] - p[0], center[1] - p[1])
                       >= min_instance_distance for p in placed):
                    break
            else:
                ok = False
                break
            placed.append(center)
            fired = tuple(bool(rng.random() < prob) for _, _, prob in layout.elements)
            instances.append(PartInstance(part_id=layout.part_id,
                                          object_id=len(placed) - 1,
                                          center=center, scale=object_scale,
                                          fired=fired))
        if ok:
            return SceneGeometry(image_id=image_id, natural_size=(h, w),
                                 instances=tuple(instances))
    raise ValueError("cannot place part instances far enough apart")


@dataclass(frozen=True)
class RenderedScene:
    features: FeatureMap
    annotations: tuple[PartAnnotation, ...]
    # planted cue cells per instance: {(part_id, object_id): [((i, j), proto), ...]}
    planted: dict = field(default_factory=dict)


def render_scene(spec: SynthSpec, geometry: SceneGeometry, short_edge: int,
                 protos: np.ndarray, background: np.ndarray,
                 rng: np.random.Generator) -> RenderedScene:
    """Feature map and annotations of a scene resized so its short edge is
    `short_edge` pixels."""
    nh, nw = geometry.natural_size
    rho = short_edge / min(nh, nw)
    rh, rw = (short_edge, int(round(nw * rho))) if nh <= nw else \
             (int(round(nh * rho)), short_edge)
    grid = grid_size_for_image((rh, rw), spec.stride)
    lat = LatticeSpec(stride=spec.stride, receptive_offset=spec.stride // 2,
                      image_size=(rh, rw), grid_size=grid)
    gh, gw = grid
    d = spec.depth

    idx = rng.integers(len(background), size=(gh, gw))
    data = background[idx] + rng.normal(0.0, spec.background_sigma, size=(gh, gw, d))
    if spec.clutter_rate > 0:
        clutter = rng.random((gh, gw)) < spec.clutter_rate
        cy, cx = np.nonzero(clutter)
        which = rng.integers(len(protos), size=len(cy))
        data[cy, cx] = protos[which] + rng.normal(0.0, spec.noise_sigma,
                                                  size=(len(cy), d))

    annotations = []
    planted: dict = {}
    for inst in geometry.instances:
        layout = spec.layout(inst.part_id)
        g = inst.scale * rho
        scaled_center = (inst.center[0] * rho, inst.center[1] * rho)
        part_cell = l4_of(scaled_center, lat)
        cues = []
        for (proto, (dy, dx), _prob), fired in zip(layout.elements, inst.fired):
            if not fired:
                continue
            ty, tx = dy * g, dx * g
            cell = (part_cell[0] - _round_half_away(ty),
                    part_cell[1] - _round_half_away(tx))
            if not (0 <= cell[0] < gh and 0 <= cell[1] < gw):
                raise AssertionError(f"planted cell {cell} left the grid")
            # a cue landing between cells fades toward the background, the
            # way a real response blurs when it misaligns with the grid
            frac = 2.0 * max(abs(ty - _round_half_away(ty)),
                             abs(tx - _round_half_away(tx)))
            lam = min(1.0, spec.scale_blur * frac)
            vec = (1.0 - lam) * protos[proto] + lam * data[cell[0], cell[1]]
            data[cell[0], cell[1]] = vec + rng.normal(0.0, spec.noise_sigma, size=d)
            cues.append((cell, proto))
        planted[(inst.part_id, inst.object_id)] = cues
        cy, cx = (float(v) for v in l0_of(part_cell, lat))
        bh = layout.box_size[0] * g
        bw = layout.box_size[1] * g
        annotations.append(PartAnnotation(
            part_id=inst.part_id, object_id=inst.object_id, center=(cy, cx),
            box=(cx - bw / 2.0, cy - bh / 2.0, cx + bw / 2.0, cy + bh / 2.0)))
    fm = FeatureMap(spec=lat, data=data.astype(np.float32))
    return RenderedScene(features=fm, annotations=tuple(annotations),
                         planted=planted)


@dataclass(frozen=True)
class SceneBundle:
    geometry: SceneGeometry
    renders: dict            # short_edge -> RenderedScene


def generate_scenes(spec: SynthSpec, n_scenes: int, scales=(224,),
                    object_scales=1.0, id_prefix: str = "scene",
                    seed_offset: int = 0) -> list[SceneBundle]:
    """Deterministic batch generation; `object_scales` is a constant or a
    per-scene sequence."""
    protos, background = make_vectors(spec)
    out = []
    for i in range(n_scenes):
        f = object_scales[i] if np.iterable(object_scales) else object_scales
        geo_rng = np.random.default_rng([spec.seed, seed_offset + i, 0])
        geometry = generate_geometry(spec, f"{id_prefix}{seed_offset + i:05d}",
                                     geo_rng, object_scale=float(f))
        renders = {}
        for k, s in enumerate(scales):
            rnd_rng = np.random.default_rng([spec.seed, seed_offset + i, 1 + k])
            renders[int(s)] = render_scene(spec, geometry, int(s), protos,
                                           background, rnd_rng)
        out.append(SceneBundle(geometry=geometry, renders=renders))
    return out


def write_dataset(spec: SynthSpec, bundles: list[SceneBundle], out_dir,
                  object_class: str = "synthetic") -> Manifest:
    """Materialize scene bundles as feature/annotation files plus a manifest."""
    from pathlib import Path
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for b in bundles:
        natural_short = min(b.geometry.natural_size)
        for scale, render in sorted(b.renders.items()):
            stem = f"{b.geometry.image_id}_s{scale}"
            write_feature_map(render.features, out_dir / f"{stem}.vcf")
            write_annotations(render.annotations, out_dir / f"{stem}.vca")
            extras = {
                "actual_scale": repr(b.geometry.actual_scale),
                "orig_h": str(b.geometry.natural_size[0]),
                "orig_w": str(b.geometry.natural_size[1]),
            }
            if scale == natural_short:
                extras["natural"] = "1"
            entries.append(ManifestEntry(
                image_id=b.geometry.image_id, feature_path=f"{stem}.vcf",
                annotation_path=f"{stem}.vca", object_class=object_class,
                image_size=render.features.spec.image_size, scale=scale,
                extras=extras))
    manifest = Manifest(root=out_dir, entries=tuple(entries))
    write_manifest(manifest, out_dir / "manifest.txt")
    return manifest


def default_spec(depth: int = 16, n_parts: int = 3, seed: int = 0,
                 noise_sigma: float = 2.0, clutter_rate: float = 0.0,
                 fire_prob: float = 1.0) -> SynthSpec:
    """A compact three-part world used across tests and scripts: nine-cue
    constellations with distinct prototypes per element."""
    ring = ((0, 0), (0, 3), (0, -3), (3, 0), (-3, 0),
            (2, 2), (2, -2), (-2, 2), (-2, -2))
    parts = []
    proto = 0
    for s in range(n_parts):
        elements = []
        for off in ring:
            elements.append((proto, off, fire_prob))
            proto += 1
        parts.append(PartLayout(part_id=s, elements=tuple(elements)))
    return SynthSpec(parts=tuple(parts), depth=depth, seed=seed,
                     noise_sigma=noise_sigma, clutter_rate=clutter_rate)


def match_prototypes(dictionary, protos: np.ndarray) -> dict[int, tuple[int, float]]:
    """Closest dictionary concept per planted prototype: {proto: (concept, dist)}."""
    out = {}
    for j, p in enumerate(protos):
        d = np.linalg.norm(dictionary.centers - p, axis=1)
        out[j] = (int(d.argmin()), float(d.min()))
    return out


def object_mask(geometry: SceneGeometry, spec: SynthSpec,
                pad: float = 8.0) -> np.ndarray:
    """Binary mask of the synthetic object: the padded union of its part
    boxes at natural size."""
    h, w = geometry.natural_size
    mask = np.zeros((h, w), dtype=bool)
    for inst in geometry.instances:
        layout = spec.layout(inst.part_id)
        bh = layout.box_size[0] * inst.scale + 2 * pad
        bw = layout.box_size[1] * inst.scale + 2 * pad
        cy, cx = inst.center
        r0 = max(0, int(cy - bh / 2))
        r1 = min(h, int(cy + bh / 2))
        c0 = max(0, int(cx - bw / 2))
        c1 = min(w, int(cx + bw / 2))
        mask[r0:r1, c0:c1] = True
    return mask
