"""Exception hierarchy shared by the whole pipeline.

Every error the CLI can surface maps to one subclass of PipelineError so
that commands can emit a machine-readable name plus message on stderr.
"""


class PipelineError(Exception):
    """Base class for all pipeline failures."""

    def payload(self) -> dict:
        return {"error": type(self).__name__, "message": str(self)}


# dataset
class MissingFile(PipelineError):
    pass


class SchemaMismatch(PipelineError):
    pass


class BadSignalShape(PipelineError):
    pass


class BadFold(PipelineError):
    pass


class InvalidProbability(PipelineError):
    pass


# preprocess
class EmptyClass(PipelineError):
    pass


class EmptyTrainingSet(PipelineError):
    pass


class LeadCountMismatch(PipelineError):
    pass


class ZeroClassCount(PipelineError):
    pass


# model
class InvalidConfig(PipelineError):
    pass


class ShapeMismatch(PipelineError):
    pass


class StaleCache(PipelineError):
    pass


class IoFailure(PipelineError):
    pass


class CorruptCheckpoint(PipelineError):
    pass


# training
class NonFiniteInput(PipelineError):
    pass


class EmptyTrainSet(PipelineError):
    pass


class NonFiniteLoss(PipelineError):
    def __init__(self, message: str, epoch: int | None = None):
        super().__init__(message)
        self.epoch = epoch

    def payload(self) -> dict:
        out = super().payload()
        if self.epoch is not None:
            out["epoch"] = self.epoch
        return out


# cli / evaluation
class CheckpointMismatch(PipelineError):
    pass


class MalformedInput(PipelineError):
    pass
