from .core import (FAST_CHANNELS, FEATURE_STRIDES, PAPER_CHANNELS, ConvLayer, HENModel, build_hen,
                   forward, forward_batch, predict)
from .train import OptState, TrainConfig, train
from .weights import load_checkpoint, load_weights, save_checkpoint, save_weights
