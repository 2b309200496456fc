"""Python access to masked multimodal distillation for cross-domain few-shot action recognition."""

from mmcdfsl._core import (
    ConfigError,
    ContractError,
    EpisodeError,
    IoError,
    NumericError,
    TubeMask,
    ci95_halfwidth,
    config_dump,
    config_hash,
    config_keys,
    count_flops,
    generate_dataset,
    kept_spatial_count,
    run_pipeline,
    tube_mask,
)

__all__ = [
    "ConfigError",
    "ContractError",
    "EpisodeError",
    "IoError",
    "NumericError",
    "TubeMask",
    "ci95_halfwidth",
    "config_dump",
    "config_hash",
    "config_keys",
    "count_flops",
    "generate_dataset",
    "kept_spatial_count",
    "run_pipeline",
    "tube_mask",
]
