"""Python access to the pvscan pipeline core."""

from ._pvscan import (
    PvscanError,
    bce_loss,
    bucket_for_count,
    build_site_query,
    class_metrics,
    default_regions,
    f1_score,
    gaussian_kde,
    mock_assess,
    parse_model_response,
    parse_site_response,
    region_for_centroid,
    render_report_from_rates,
    run_cli,
    serialize_assessment,
    slice_png,
    synthesize_random_scene,
    system_prompt,
    triage,
    validate_jsonl,
)

__all__ = [
    "PvscanError",
    "bce_loss",
    "bucket_for_count",
    "build_site_query",
    "class_metrics",
    "default_regions",
    "f1_score",
    "gaussian_kde",
    "mock_assess",
    "parse_model_response",
    "parse_site_response",
    "region_for_centroid",
    "render_report_from_rates",
    "run_cli",
    "serialize_assessment",
    "slice_png",
    "synthesize_random_scene",
    "system_prompt",
    "triage",
    "validate_jsonl",
]
