"""Exception types raised across the package."""


class OptLmError(Exception):
    """Base class for all library errors."""


class MathSyntaxError(OptLmError):
    """Raised on malformed math input; carries the character offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.message = message
        self.offset = offset


class UnbalancedDelimiter(MathSyntaxError):
    """Unmatched $, brace, or parenthesis in a document or expression."""


class CapExceeded(OptLmError):
    """Tree exceeds the depth or per-node child-count limit."""


class InvalidTraversal(OptLmError):
    """Token/position stream is not a depth-first traversal of any tree."""


class UnprintableNode(OptLmError):
    """Tree cannot be rendered back to the supported LaTeX subset."""


class SequenceTooLong(OptLmError):
    """Mixed sequence exceeds the model's maximum length."""


class ShapeMismatch(OptLmError):
    """Tensor arguments have inconsistent shapes."""


class MaskedTarget(OptLmError):
    """A training target falls outside its legal-next-token mask."""


class NonFiniteLoss(OptLmError):
    """Training loss became NaN or infinite."""


class IllegalToken(OptLmError):
    """Decoder was fed a token its current mask forbids."""


class LengthExceeded(OptLmError):
    """Prompt leaves no room for generation under the length limit."""


class EvaluationError(OptLmError):
    """Base class for expression evaluation failures."""


class DivisionByZero(EvaluationError):
    """Expression divides by an exactly-zero denominator."""


class UnboundVariable(EvaluationError):
    """Expression references a variable with no binding."""


class UnsupportedOperator(EvaluationError):
    """Expression uses an operator the evaluator does not define."""


class Misaligned(OptLmError):
    """Prediction and gold files have different line counts."""
