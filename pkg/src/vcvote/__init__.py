"""Semantic part detection under occlusion by accumulating log-likelihood
weighted votes from visual-concept cues."""

from .config import Config, ConfigError, load_config, save_config
from .concepts import ConceptDictionary, best_match_in, distance, fit_dictionary
from .evaluation import (Detection, EvalReport, GroundTruth, evaluate_detections,
                         iou, match_and_ap, scale_loss)
from .fileio import (FeatureMap, Manifest, ManifestEntry, PartAnnotation,
                     load_dataset, load_model, read_annotations, read_feature_map,
                     read_manifest, save_model, write_annotations,
                     write_feature_map, write_manifest)
from .lattice import LatticeSpec, Neighborhood, l0_of, l4_of, neighborhood
from .likelihood import (CueModel, ModelBundle, PartModel, TrainingSamples,
                         calibrate_threshold, make_cue_model, sample_negatives,
                         select_supporting)
from .multiscale import SCALE_SCHEDULE, ScalePrediction, detect_multiscale, predict_scale
from .occlusion import OccluderSegment, OcclusionConfig, corrupt_features, synthesize
from .spatial import OffsetMap, estimate_offset_map, restricted_neighborhood
from .synthgen import PartLayout, SynthSpec, default_spec, generate_scenes
from .training import train_model, train_part
from .voting import (ScoreMap, VoteParams, cast_votes, combine, detect_image,
                     extract_detections, fire_concepts, score_part, upsample)

__version__ = "0.1.0"
