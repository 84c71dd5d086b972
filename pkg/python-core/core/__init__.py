# SA3 - Core Module: tensors, gradient tape, primitive ops, parameters
from . import ops
from .tensor import Tensor, GradTape, Gradients, backward, as_tensor
from .parameters import ParameterStore, SGDMomentum, Weights, gradients_by_name

__all__ = [
    'ops', 'Tensor', 'GradTape', 'Gradients', 'backward', 'as_tensor',
    'ParameterStore', 'SGDMomentum', 'Weights', 'gradients_by_name',
]
