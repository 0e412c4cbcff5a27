"""Fully convolutional texture segmentation, desk scale.

Library surface: differentiable kernels, the four-block skip-fusion network,
supervised/unsupervised trainers, k-means pre-segmentation, iterative patch
refinement, synthetic mosaic data, and segmentation metrics.
"""

from .errors import (CheckpointError, ConfigError, DataError, NumericalError,
                     ShapeError, TexsegError)
from .tensor import IGNORE_LABEL, ConvParams, ParamGrads, Tensor, sgd_step, xavier_init
from .ops import (conv2d_backward, conv2d_forward, conv_transpose2d_backward,
                  conv_transpose2d_forward, make_bilinear_upsample_params,
                  maxpool_backward, maxpool_forward, resize_bilinear,
                  resize_nearest_labels, softmax_xent_pixelwise, upsample)
from .model import (NetworkSpec, NetworkState, build_fcnt, forward, backward,
                    load_state, predict_labels, rank_labels, save_state)
from .train import (EarlyStopConfig, StopReport, TrainConfig, TrainSample,
                    infer_full, train_supervised, train_unsupervised)
from .mosaic import (DatasetConfig, MosaicSpec, TextureSpec, build_dataset,
                     compose_mosaic, default_bank, gen_texture,
                     ingest_real_dataset)
from .preseg import (PresegCleanResult, PresegConfig, kmeans,
                     load_external_preseg, preseg_clean, preseg_from_network)
from .refine import (PatchDecomposition, RefineResult, connected_components,
                     largest_patches_fill, refine)
from .metrics import (EvalReport, consistency_measures, evaluate_pair,
                      evaluate_suite, match_labels, pixel_measures,
                      region_measures)

__version__ = "0.1.0"
