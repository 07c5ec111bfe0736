"""Exception hierarchy. Every error carries a stable machine-readable code."""


class SalauditError(Exception):
    code = "error"

    def __init__(self, message, **context):
        super().__init__(message)
        self.context = context


# tensor / file format
class BadMagic(SalauditError):
    code = "bad_magic"


class BadHeader(SalauditError):
    code = "bad_header"


class ShapeMismatch(SalauditError):
    code = "shape_mismatch"


class NonFiniteValue(SalauditError):
    code = "non_finite_value"


# manifest
class DuplicateImageId(SalauditError):
    code = "duplicate_image_id"


class UnknownClassLabel(SalauditError):
    code = "unknown_class_label"


class MissingField(SalauditError):
    code = "missing_field"


# saliency composition
class ClassOutOfRange(SalauditError):
    code = "class_out_of_range"


class EmptyActivation(SalauditError):
    code = "empty_activation"


class IdMismatch(SalauditError):
    code = "id_mismatch"


# aggregation
class EmptyMask(SalauditError):
    code = "empty_mask"


class BadPercentile(SalauditError):
    code = "bad_percentile"


class DegenerateDistribution(SalauditError):
    code = "degenerate_distribution"


class EmptyInput(SalauditError):
    code = "empty_input"


# statistics
class LengthMismatch(SalauditError):
    code = "length_mismatch"


class TooFewPoints(SalauditError):
    code = "too_few_points"


class TooFewGroups(SalauditError):
    code = "too_few_groups"


class TooFewNonzeroDiffs(SalauditError):
    code = "too_few_nonzero_diffs"


# dataset ops
class MissingMask(SalauditError):
    code = "missing_mask"


class InsufficientUninked(SalauditError):
    code = "insufficient_uninked"


class BadRatio(SalauditError):
    code = "bad_ratio"


# reports
class IncompatibleReports(SalauditError):
    code = "incompatible_reports"
