"""Exception types shared across the package."""


class ConfigurationError(Exception):
    """Invalid or unusable configuration, dataset layout, or CLI input."""


class PretrainedWeightsError(Exception):
    """Pretrained backbone weights are missing and could not be fetched."""

    def __init__(self, backbone: str, cause: Exception | None = None):
        self.backbone = backbone
        msg = f"pretrained weights for backbone '{backbone}' are not available locally and could not be fetched"
        if cause is not None:
            msg += f" ({cause})"
        super().__init__(msg)


class TrainingDivergedError(Exception):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, step: int, learning_rate: float):
        self.epoch = epoch
        self.step = step
        self.learning_rate = learning_rate
        super().__init__(
            f"non-finite loss at epoch {epoch}, step {step} (learning rate {learning_rate:g})"
        )
