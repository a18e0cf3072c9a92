"""
Exception hierarchy shared by every module
"""


class GDCNNError(Exception):
    pass


class ShapeError(GDCNNError, ValueError):
    pass


class StateError(GDCNNError):
    pass


class NonFiniteError(GDCNNError, ArithmeticError):
    def __init__(self, layer: str):
        super().__init__(f"non-finite activation in layer {layer}")
        self.layer = layer


class ConfigError(GDCNNError, ValueError):
    pass


class DataError(GDCNNError):
    pass


class ManifestNotFoundError(DataError, FileNotFoundError):
    pass


class ImageFormatError(DataError):
    pass


class CheckpointFormatError(GDCNNError):
    pass


class MetricsError(GDCNNError, ValueError):
    pass


class TrainingError(GDCNNError):
    pass


class CamError(GDCNNError):
    pass
