"""optlm: joint text-and-math language modeling on operator trees."""

from .errors import (
    CapExceeded,
    DivisionByZero,
    EvaluationError,
    IllegalToken,
    InvalidTraversal,
    LengthExceeded,
    MaskedTarget,
    MathSyntaxError,
    Misaligned,
    NonFiniteLoss,
    OptLmError,
    SequenceTooLong,
    ShapeMismatch,
    UnbalancedDelimiter,
    UnboundVariable,
    UnprintableNode,
    UnsupportedOperator,
)
from .latex import to_latex
from .parser import parse_math
from .tokens import (
    MAX_CHILD_COUNT,
    MAX_TREE_DEPTH,
    MathToken,
    MixedItem,
    MixedSequence,
    OptNode,
    TokenKind,
    TypeTag,
)
from .trees import (
    compute_positions,
    delinearize,
    linearize,
    normalize_tree,
    segment_regions,
    tree_from_json,
    tree_from_span,
    tree_to_json,
)
from .vocab import (
    EncodedSequence,
    IdLayout,
    MathVocab,
    SymbolClass,
    TextVocab,
    classify_symbol,
    encode_mixed,
    id_layout,
    load_vocab,
    save_vocab,
)

__version__ = "0.1.0"
