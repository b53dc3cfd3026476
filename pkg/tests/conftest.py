import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from vcvote import synthgen, training
from vcvote.config import Config
from vcvote.fileio import FeatureMap, PartAnnotation


@dataclass
class Image:
    """Minimal in-memory stand-in for a loaded dataset entry."""
    image_id: str
    features: FeatureMap
    annotations: tuple
    scale: int = 224
    extras: dict = None


def bundles_to_images(bundles, scale=224):
    return [Image(image_id=b.geometry.image_id,
                  features=b.renders[scale].features,
                  annotations=b.renders[scale].annotations)
            for b in bundles]


@dataclass
class World:
    """A trained synthetic world shared across test modules."""
    spec: synthgen.SynthSpec
    cfg: Config
    train_scenes: list
    train_images: list
    bundle: object
    prototypes: np.ndarray
    background: np.ndarray
    proto_to_concept: dict

    def planted_concepts(self, part_id):
        layout = self.spec.layout(part_id)
        return {self.proto_to_concept[proto][0] for proto, _, _ in layout.elements}


@pytest.fixture(scope="session")
def world():
    spec = synthgen.default_spec(depth=16, n_parts=3, seed=7, noise_sigma=2.0)
    train_scenes = synthgen.generate_scenes(spec, 60, scales=(224,), id_prefix="tr")
    train_images = bundles_to_images(train_scenes)
    cfg = Config(num_concepts=43, num_supporting=12, seed=3)
    cfg.validate()
    bundle = training.train_model(train_images, cfg)
    protos, background = synthgen.make_vectors(spec)
    matches = synthgen.match_prototypes(bundle.dictionary, protos)
    return World(spec=spec, cfg=cfg, train_scenes=train_scenes,
                 train_images=train_images, bundle=bundle, prototypes=protos,
                 background=background, proto_to_concept=matches)


def make_feature_map(rng, grid=(14, 14), depth=8, image=None, scale=40.0):
    if image is None:
        image = (grid[0] * 16, grid[1] * 16)
    from vcvote.lattice import LatticeSpec
    spec = LatticeSpec(stride=16, receptive_offset=8, image_size=image,
                       grid_size=grid)
    data = rng.normal(0.0, scale, size=(*grid, depth)).astype(np.float32)
    return FeatureMap(spec=spec, data=data)


def make_annotation(part_id=0, center=(112.0, 112.0), box_size=(96.0, 96.0),
                    object_id=0, occ=0.0):
    cy, cx = center
    bh, bw = box_size
    return PartAnnotation(part_id=part_id, object_id=object_id, center=center,
                          box=(cx - bw / 2, cy - bh / 2, cx + bw / 2, cy + bh / 2),
                          occluded_fraction=occ)
