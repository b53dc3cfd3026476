"""Bridge from images to the .vcf feature-tensor format: a 16-layer convnet
trunk captured at its fourth pooling stage (512 channels, stride 16)."""

from .backbone import (DEPTH, RECEPTIVE_OFFSET, STRIDE, WeightError,
                       build_trunk, extract_features, load_trunk)
from .export import TEST_SCALES, TRAIN_SCALE, ExportJob, export, read_vca
from .formats import write_manifest, write_vca, write_vcf
from .imaging import ImageError, OccluderPaste, composite, crop, load_image, resize_short_edge

__version__ = "0.1.0"
