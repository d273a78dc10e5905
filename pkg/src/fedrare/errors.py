"""Exception types raised across the simulator."""


class FedRareError(ValueError):
    """Base class for all simulator errors."""


class OutOfVocabularyError(FedRareError):
    pass


class EmptyInputError(FedRareError):
    pass


class InvalidLabelError(FedRareError):
    pass


class EmptyCorpusError(FedRareError):
    pass


class InfeasiblePartitionError(FedRareError):
    pass


class EmptyEvaluationError(FedRareError):
    pass


class UnsupportedScheduleError(FedRareError):
    """Fixed-frequency sampling cannot place more than one adversary per round."""


class AggregationEmptyError(FedRareError):
    """Every residual of a round was rejected by the defense."""


class ConfigError(FedRareError):
    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        super().__init__(message)

    def __str__(self):
        msg = self.args[0]
        if self.path:
            msg = f"{self.path}: {msg}"
        if self.line is not None:
            msg = f"line {self.line}: {msg}"
        return msg


class NumericError(FedRareError):
    def __init__(self, round_index, message="non-finite parameters"):
        self.round_index = round_index
        super().__init__(f"round {round_index}: {message}")
