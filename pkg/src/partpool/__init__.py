"""Deformable part-based region pooling with a synthetic detection benchmark."""

from .backbone import FeatureStack, LocStack, build_stacks, init_backbone
from .config import Config, load_config
from .core import AffineParams, Grid2D, Rect, avg_pool_rect
from .errors import (CheckpointError, ConfigInvalid, DegenerateRegion,
                     DimensionMismatch, EmptyRect, NonFinite, PartPoolError)
from .heads import RefineParams, classify, decode_box, refine_localization
from .kernels import IMPL as KERNEL_IMPL
from .metrics import Detection, EvalReport, average_precision, iou, map_report, nms
from .pooling import (PartGrid, PooledScores, Region, deformable_pool,
                      deformation_field, enlarge_region, fit_part_grid,
                      pool_localization, ps_pool)
from .train import Model, evaluate, train

__version__ = "0.1.0"
