"""Adaptive graph convolution (AGConv) for point clouds on a small numpy autograd engine."""

from .autograd import Parameter, Tape, Tensor, backward, grad_check
from .checkpoint import load_checkpoint, save_checkpoint
from .config import TrainConfig, make_config
from .estimators import AGConvClassifier, AGConvSegmenter
from .graph import NeighborGraph, fps, idw_interpolate, knn_feature, knn_spatial
from .layers import AGConvLayer, FixedKernelLayer, GraphConv, GraphPool, STNLayer, build_edges
from .metrics import MetricsReport, compute_iou
from .models import ClassificationNet, SegmentationNet, model_param_count
from .optim import SGD, cosine_lr
from .pointcloud import PointCloud, gen_synthetic, load_xyz, save_xyz
from .training import evaluate, fit, robustness_sweep, train

__version__ = "0.1.0"
