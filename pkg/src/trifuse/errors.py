"""Exception hierarchy shared across the toolkit.

Two broad families matter to callers: ``DataError`` (bad inputs, bad files,
bad configuration -- CLI exit code 2) and ``EndpointError`` (the remote LLM
endpoint failed -- CLI exit code 3). Everything derives from ``TrifuseError``
so library users can catch one base class.
"""

from __future__ import annotations


class TrifuseError(Exception):
    """Base class for all toolkit errors."""


class DataError(TrifuseError):
    """Invalid data, file, or configuration. Maps to CLI exit code 2."""


class EndpointError(TrifuseError):
    """LLM endpoint failure. Maps to CLI exit code 3."""


# --- dataset / record errors -------------------------------------------------

class MalformedLine(DataError):
    def __init__(self, line_number: int, reason: str):
        super().__init__(f"line {line_number}: {reason}")
        self.line_number = line_number
        self.reason = reason


class DuplicateId(DataError):
    def __init__(self, record_id: str):
        super().__init__(f"duplicate record id {record_id!r}")
        self.record_id = record_id


class MissingField(DataError):
    def __init__(self, name: str, line_number: int | None = None):
        where = f" at line {line_number}" if line_number is not None else ""
        super().__init__(f"missing field {name!r}{where}")
        self.name = name
        self.line_number = line_number


# --- configuration -----------------------------------------------------------

class InvalidConfig(DataError):
    pass


# --- checkpoint errors -------------------------------------------------------

class BlobSizeMismatch(DataError):
    def __init__(self, expected_bytes: int, found_bytes: int):
        super().__init__(
            f"checkpoint blob size mismatch: expected {expected_bytes} bytes, "
            f"found {found_bytes}"
        )
        self.expected_bytes = expected_bytes
        self.found_bytes = found_bytes


class UnknownTensorName(DataError):
    def __init__(self, name: str, detail: str = "unknown tensor"):
        super().__init__(f"{detail}: {name!r}")
        self.name = name


class NonFiniteTensor(DataError):
    def __init__(self, name: str):
        super().__init__(f"tensor {name!r} contains non-finite values")
        self.name = name


# --- segmentation ------------------------------------------------------------

class EmptyInput(DataError):
    def __init__(self, detail: str = "input text is empty after trimming"):
        super().__init__(detail)


# --- embedding provider ------------------------------------------------------

class MissingId(DataError):
    def __init__(self, record_id: str):
        super().__init__(f"no embedding entry for id {record_id!r}")
        self.record_id = record_id


class DimensionMismatch(DataError):
    def __init__(self, expected: int, found: int, detail: str = "dimension"):
        super().__init__(f"{detail} mismatch: expected {expected}, found {found}")
        self.expected = expected
        self.found = found


class NonFiniteVector(DataError):
    def __init__(self, record_id: str):
        super().__init__(f"embedding for id {record_id!r} contains non-finite values")
        self.record_id = record_id


# --- kernels / detector ------------------------------------------------------

class NonFiniteInput(DataError):
    def __init__(self, detail: str = "non-finite input tensor"):
        super().__init__(detail)


class TooManyUnits(DataError):
    def __init__(self, m: int, m_max: int):
        super().__init__(f"trajectory has {m} units, maximum is {m_max}")
        self.m = m
        self.m_max = m_max


# --- training / evaluation ---------------------------------------------------

class SingleClassDataset(DataError):
    def __init__(self, detail: str = "training split does not contain two classes"):
        super().__init__(detail)


class SingleClass(DataError):
    def __init__(self, detail: str = "both classes are required to compute AUROC"):
        super().__init__(detail)


class LengthMismatch(DataError):
    def __init__(self, n_scores: int, n_labels: int):
        super().__init__(f"{n_scores} scores but {n_labels} labels")
        self.n_scores = n_scores
        self.n_labels = n_labels


class NonFiniteLoss(DataError):
    def __init__(self, step: int):
        super().__init__(f"loss became non-finite at optimisation step {step}")
        self.step = step


# --- prompt templates --------------------------------------------------------

class MissingVariable(DataError):
    def __init__(self, name: str):
        super().__init__(f"prompt template placeholder {name!r} has no binding")
        self.name = name


class UnknownTemplate(DataError):
    def __init__(self, template_id: str):
        super().__init__(f"unknown prompt template {template_id!r}")
        self.template_id = template_id


# --- endpoint errors ---------------------------------------------------------

class EndpointUnreachable(EndpointError):
    def __init__(self, detail: str):
        super().__init__(detail)


class RetriesExhausted(EndpointError):
    def __init__(self, path_name: str, attempts: int):
        super().__init__(f"retries exhausted for path {path_name!r} after {attempts} attempts")
        self.path_name = path_name
        self.attempts = attempts


class EmptyCompletion(EndpointError):
    def __init__(self, path_name: str):
        super().__init__(f"endpoint returned an empty completion for path {path_name!r}")
        self.path_name = path_name


class UnparseableVerdict(EndpointError):
    def __init__(self, judge_id: str):
        super().__init__(f"judge {judge_id!r} never produced a parseable 0/1 verdict")
        self.judge_id = judge_id


class JudgeUnreachable(EndpointError):
    def __init__(self, judge_id: str, detail: str):
        super().__init__(f"judge {judge_id!r} unreachable: {detail}")
        self.judge_id = judge_id
