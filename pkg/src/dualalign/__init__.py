"""Channel-wise feature alignment for synthetic-to-real segmentation.

A small, fully deterministic pipeline: a tape-differentiated tensor core,
channel-statistic alignment in both an image generator and a segmentation
network, a seeded two-domain scene benchmark, joint training with
stochastic target sampling, and mIoU evaluation with ablation sweeps.
"""

from .align import ChannelStats, GramMatrix, adain, channel_stats, content_loss, gram, style_loss
from .errors import ConfigError, DataError, NumericalError
from .evaluate import ConfusionMatrix, evaluate_model, miou
from .generator import GeneratorModel, StylizedSample, generation_loss, synthesize
from .gradcheck import grad_check
from .optim import ParameterSet, sgd_momentum_step
from .scenes import (DomainShift, LabeledScene, SceneSpec, generate_domain,
                     make_benchmark)
from .segnet import PredictionMap, SegModel, seg_forward_test, seg_forward_train
from .tensor import ConvLayer, Tape, Tensor, conv2d, relu, softmax_cross_entropy, upsample_nearest2
from .trainer import TrainConfig, init_models, sample_targets, train, train_step

__version__ = "0.1.0"
