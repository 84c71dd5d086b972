"""
SA3 - Instance-to-Image Transformation

Turns per-proposal objectness and class logits into image-level class
probabilities so target images with presence labels only can supervise
the shared RPN and detection head.

Per proposal n, the row of the class-specific objectness matrix carries
+o_n at the most likely class and −o_n at the least likely one. Then
    P_c = Σ_n softmax_row(x̄)_{n,c} · softmax_col(ō)_{n,c}

The argmax/argmin pattern is read from the logit values and held fixed
while differentiating.

Complexity Guarantees:
- build_objectness_matrix: O(N·C)
- aggregate_image_prediction: O(N·C)
"""

from dataclasses import dataclass

import numpy as np

from core import ops
from core.tensor import Tensor, as_tensor
from standards.errors import ContractViolationError, InvalidArgumentError
from standards.formal_specs import verify_complexity
from standards.type_definitions import DomainLabel, ImageLabelVector


@dataclass(frozen=True)
class ClassSpecificObjectness:
    """
    ō ∈ R^{N×C} with the fixed assignment pattern that produced it.

    Invariants:
    - pattern[n] is +1 at one class, −1 at a different class, 0 elsewhere
    """
    matrix: Tensor
    pattern: np.ndarray

    def __post_init__(self):
        if self.matrix.ndim != 2 or self.pattern.shape != self.matrix.shape:
            raise InvalidArgumentError("objectness matrix and its pattern must be the same N×C shape")
        if not (np.all(self.pattern.sum(axis=1) == 0) and np.all(np.abs(self.pattern).sum(axis=1) == 2)):
            raise InvalidArgumentError("every pattern row needs exactly one +1 and one −1")

    @property
    def shape(self):
        return self.matrix.shape


@dataclass(frozen=True)
class ImagePrediction:
    """
    Image-level class probabilities P.

    Values lie strictly inside (0, 1) mathematically; the check here
    rejects anything outside [0, 1] or non-finite.
    """
    probabilities: Tensor

    def __post_init__(self):
        values = self.probabilities.data
        if values.ndim != 1:
            raise InvalidArgumentError(f"image prediction must be a vector, got shape {values.shape}")
        if not (np.all(np.isfinite(values)) and np.all(values >= 0.0) and np.all(values <= 1.0)):
            raise InvalidArgumentError("image prediction values must lie in [0, 1]")

    def __len__(self) -> int:
        return self.probabilities.shape[0]

    def values(self) -> np.ndarray:
        return self.probabilities.numpy()


def assignment_pattern(x: np.ndarray) -> np.ndarray:
    """
    +1 at each row's argmax (ties → lowest index), −1 at its argmin
    (ties → highest index; forced to the highest index ≠ argmax).
    """
    rows, classes = x.shape
    high = np.argmax(x, axis=1)
    low = classes - 1 - np.argmin(x[:, ::-1], axis=1)
    clash = low == high
    low[clash] = np.where(high[clash] == classes - 1, classes - 2, classes - 1)
    pattern = np.zeros((rows, classes), dtype=np.float64)
    pattern[np.arange(rows), high] = 1.0
    pattern[np.arange(rows), low] = -1.0
    return pattern


@verify_complexity(time="O(n)", space="O(n)", description="n = N·C")
def build_objectness_matrix(o, x) -> ClassSpecificObjectness:
    """
    ō_{n,argmax} = o_n, ō_{n,argmin} = −o_n, all other entries 0.

    Args:
        o: objectness logits, shape (N,)
        x: class logits, shape (N, C)

    Raises:
        InvalidArgumentError: C < 2, N < 1 or disagreeing N
    """
    o, x = as_tensor(o), as_tensor(x)
    if x.ndim != 2 or x.shape[1] < 2:
        raise InvalidArgumentError(f"class logits must be N×C with C ≥ 2, got shape {x.shape}")
    if o.shape != (x.shape[0],):
        raise InvalidArgumentError(f"objectness shape {o.shape} does not match {x.shape[0]} proposals")
    pattern = assignment_pattern(x.data)
    matrix = ops.mul(ops.reshape(o, (x.shape[0], 1)), pattern)
    return ClassSpecificObjectness(matrix, pattern)


@verify_complexity(time="O(n)", space="O(n)", description="n = N·C")
def aggregate_image_prediction(x_bar, objectness: ClassSpecificObjectness) -> ImagePrediction:
    """
    P_c = Σ_n softmax_row(x̄)_{n,c} · softmax_col(ō)_{n,c}.

    Raises:
        InvalidArgumentError: shape mismatch
    """
    x_bar = as_tensor(x_bar)
    if x_bar.shape != objectness.shape:
        raise InvalidArgumentError(f"x̄ shape {x_bar.shape} differs from ō shape {objectness.shape}")
    product = ops.mul(ops.softmax_axis(x_bar, "row"), ops.softmax_axis(objectness.matrix, "column"))
    return ImagePrediction(ops.sum(product, axis=0))


def i2itm_loss(prediction: ImagePrediction, labels: ImageLabelVector,
               domain: DomainLabel = DomainLabel.TARGET) -> Tensor:
    """
    Mean BCE of P against the presence labels.

    Raises:
        ContractViolationError: called for a source-domain image
        InvalidArgumentError: label length differs from P
    """
    if domain is not DomainLabel.TARGET:
        raise ContractViolationError("i2itm_loss is defined for target-domain images only")
    if len(labels) != len(prediction):
        raise InvalidArgumentError(f"label vector has {len(labels)} entries, prediction has {len(prediction)}")
    return ops.bce_loss(prediction.probabilities, labels.as_array())
