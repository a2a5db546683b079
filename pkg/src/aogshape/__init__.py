"""And-Or graph shape models: contour features, exact latent inference and dCCCP training."""
from .geometry import BoundingBox, Block, Contour, ContourSet
from .model import AndOrModel, LatentAssignment, ModelConfig, ShapeContextConfig, new_model
from .features import assemble_joint
from .inference import Detection, TrainSample, detect, infer_best
from .dcccp import TrainLimits, train
from .evaluation import evaluate, iou, top1_accuracy

__all__ = [
    "AndOrModel", "Block", "BoundingBox", "Contour", "ContourSet", "Detection", "LatentAssignment",
    "ModelConfig", "ShapeContextConfig", "TrainLimits", "TrainSample", "assemble_joint", "detect",
    "evaluate", "infer_best", "iou", "new_model", "top1_accuracy", "train",
]
