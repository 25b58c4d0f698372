"""Desk-scale video object segmentation toolkit: memory attention, TTA fusion,
post-processing and J/F evaluation."""

from .attention import (
    LayerProjections,
    attend,
    attend_lstt_v2,
    attend_with_identity,
    correlation,
    softmax_rows,
)
from .gradcheck import gradient_check
from .memory import MemoryBank, MemoryEntry, TopKConfig, append_frame, init_bank, read
from .metrics import boundary_f, evaluate_sequence, jaccard, overall_score
from .propagation import PropagationConfig, build_identity, encode_frame, propagate

__version__ = "0.1.0"
