from nnet.layers import (
    Parameter, Layer, LayerSpec, Conv1d, TransposedConv1d, PointwiseLinear, ReLU, PReLU, LayerNorm,
    MeanPoolTime, StatsPoolTime, L2Normalize, SigmoidMask,
)
from nnet.network import Network, Trace, average_gradients
from nnet.optim import Optimizer
from nnet.gradcheck import grad_check, relative_error
from nnet.checkpoint import save_checkpoint, load_checkpoint, encode_checkpoint, decode_checkpoint
