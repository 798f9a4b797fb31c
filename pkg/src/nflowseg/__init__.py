"""Motion segmentation and egomotion estimation from event-based normal flow."""

from .background import (BackgroundMap, BackgroundState, TranslationEstimate,
                         background_similarity, estimate_translation_svm,
                         match_clusters, update_map, warp_background)
from .clustering import (ClusterSet, ResidualGrid, kmeans, over_segment,
                         segregate_by_residual, smooth_residuals)
from .config import PipelineConfig
from .data import (GroundTruth, Intrinsics, Predictions, Recording, SliceData,
                   load_predictions, load_recording)
from .errors import (DegenerateSystem, EmptySlice, FormatError,
                     InsufficientSupport, NFlowSegError, ValidationError,
                     VersionError)
from .evaluation import (EvalReport, evaluate, frame_iou, match_segments,
                         relative_object_motion, rmse_velocity)
from .geometry import (MotionParams, Plane, derotate, flow_at, normal_flow_at,
                       plane_motion_vector, planar_flow_matrix,
                       rotation_flow_matrix, translation_flow_matrix)
from .merging import (SegmentCandidate, fit_cluster_translation,
                      hierarchical_merge, make_candidate, similarity)
from .pipeline import (PipelineState, SegmentResult, StepInput, StepOutput,
                       pack_predictions, run, step)
from .planar_fit import PlaneFitResult, fit_plane, predict_normal_flow
from .sim import PlanarObject, SceneSpec, simulate
from .tracking import SegmentTracker, Track, TrackerConfig, predict, update

__version__ = "0.1.0"
