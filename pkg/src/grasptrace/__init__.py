"""Grasp synthesis from traced CNN features on tabletop RGB-D scenes.

The pipeline: render (or load) a scene, segment the object above the table
plane, run the network with the object mask, trace hierarchical filter
tuples down the conv stack, learn per-effector offset models from a handful
of demonstrations, predict grasp points in new scenes, and drive a two-stage
potential-descent pre-shape to reach them.
"""

from .controller import (ControllerLog, KinematicState, PotentialController,
                         home_state, run_arm_controller, run_hand_controller,
                         run_preshape)
from .dataset import (generate_dataset, load_dataset, synth_clutter,
                      synth_singulated)
from .errors import (ConfigurationError, DataError, GraspTraceError,
                     PredictionError, SegmentationError)
from .evaluation import (ClutterResult, CrossValResult, compare_strategies,
                         cross_validate, evaluate_clutter, train_type_models)
from .features import (FeatureObservation, FeatureTree, HierFeature,
                       build_feature_tree, localize_feature)
from .grasp import (BASELINE, CONV5_FILTER, CONV5_MAX, EFFECTORS, HAND_FRAME,
                    HIER_FEAT, INDEX_TIP, INDV_FILTER, STRATEGIES, THUMB_TIP,
                    GraspModel, GraspRecord, ObservationExtractor,
                    PredictedGrasp, learn_model, predict_grasp)
from .layers import CONV, MAXPOOL, LayerSpec
from .network import (ActivationTrace, NetworkSpec, UnitRef, WeightSet,
                      backward_single_path, forward_pass, load_weights,
                      receptive_field, replay_trace, save_weights)
from .reports import emit_overlay, write_report
from .scene import (Box, CameraModel, CameraPose, Cylinder, TableScene,
                    annotate, overhead_pose)
from .segmentation import OrganizedPointCloud, object_mask, ransac_plane
from .weightbank import get_desk_bank

__version__ = "0.1.0"

__all__ = [
    "ActivationTrace", "BASELINE", "Box", "CONV", "CONV5_FILTER", "CONV5_MAX",
    "CameraModel", "CameraPose", "ClutterResult", "ConfigurationError",
    "ControllerLog", "CrossValResult", "Cylinder", "DataError", "EFFECTORS",
    "FeatureObservation", "FeatureTree", "GraspModel", "GraspRecord",
    "GraspTraceError", "HAND_FRAME", "HIER_FEAT", "HierFeature", "INDEX_TIP",
    "INDV_FILTER", "KinematicState", "LayerSpec", "MAXPOOL", "NetworkSpec",
    "ObservationExtractor", "OrganizedPointCloud", "PotentialController",
    "PredictedGrasp", "PredictionError", "STRATEGIES", "SegmentationError",
    "THUMB_TIP", "TableScene", "UnitRef", "WeightSet",
    "annotate", "backward_single_path", "build_feature_tree",
    "compare_strategies", "cross_validate", "emit_overlay", "evaluate_clutter",
    "forward_pass", "generate_dataset", "get_desk_bank", "home_state",
    "learn_model", "load_dataset", "load_weights", "localize_feature",
    "object_mask", "overhead_pose", "predict_grasp", "ransac_plane",
    "receptive_field", "replay_trace", "run_arm_controller",
    "run_hand_controller", "run_preshape", "save_weights", "synth_clutter",
    "synth_singulated", "train_type_models", "write_report",
]
