"""Text-guided 3D segmentation fusion.

Arrays are (D, H, W) in C order; logits are (C, D, H, W) float64.
"""

from ._core import (
    DEFAULT_CLASSES,
    EMBEDDING_DIM,
    TextsegError,
    argmax,
    dilate,
    dsc,
    embed,
    evaluate,
    fnv1a64,
    grid_spacing,
    hd95,
    infer,
    iou,
    load_labels,
    load_logits,
    parse_prompt,
    relation_prior,
    run_cli,
    rvd,
    save_logits,
    softmax,
    squared_edt,
)

__all__ = [
    "DEFAULT_CLASSES",
    "EMBEDDING_DIM",
    "TextsegError",
    "argmax",
    "dilate",
    "dsc",
    "embed",
    "evaluate",
    "fnv1a64",
    "grid_spacing",
    "hd95",
    "infer",
    "iou",
    "load_labels",
    "load_logits",
    "parse_prompt",
    "relation_prior",
    "run_cli",
    "rvd",
    "save_logits",
    "softmax",
    "squared_edt",
]
