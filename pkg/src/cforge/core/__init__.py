from .container import (ContainerError, load_arrays, load_dataset, load_model, save_arrays,
                        save_dataset, save_model)
from .graph import (Dataset, LayerDescriptor, ModelGraph, evaluate_accuracy, layer_outputs,
                    loss_and_gradients, loss_gradients, model_forward, predict)
from .linalg import least_squares_solve
from .mlp import MLP, Adam, Linear, NoisyLinear, mlp_backward, mlp_forward
from .ops import ShapeError, conv2d_forward, fc_forward
