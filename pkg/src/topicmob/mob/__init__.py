from .estimator import NegBinTree
from .fluctuation import TestResult, fluctuation_test, suplm_pvalue
from .tree import (
    BINARY,
    CATEGORICAL,
    ORDERED,
    Node,
    SegmentRow,
    Split,
    SplitVariable,
    TestRecord,
    Tree,
    TreeConfig,
    apply_tree,
    find_split,
    grow,
    infer_candidates,
    predict_mu,
    predict_segment,
    render_tree,
    segment_table,
    select_variable,
)

__all__ = [
    "BINARY",
    "CATEGORICAL",
    "ORDERED",
    "NegBinTree",
    "Node",
    "SegmentRow",
    "Split",
    "SplitVariable",
    "TestRecord",
    "TestResult",
    "Tree",
    "TreeConfig",
    "apply_tree",
    "find_split",
    "fluctuation_test",
    "grow",
    "infer_candidates",
    "predict_mu",
    "predict_segment",
    "render_tree",
    "segment_table",
    "select_variable",
    "suplm_pvalue",
]
