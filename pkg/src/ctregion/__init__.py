"""Region-focused CT report generation pipeline.

Turns a CT volume plus six anatomical region masks into a compact visual
token sequence, per-region segmentation tokens, and deterministic patient
attributes, assembles them into per-region prompts, structures narrative
reports by region, and scores generated text against references.
"""

from .attributes import (
    LesionStats,
    PatientAttributes,
    count_mask,
    extract_attributes,
    get_diameters,
    label_components_3d,
    lesion_location,
    organ_volume,
)
from .encoder import (
    DEFAULT_CHANNELS,
    DEFAULT_GRID,
    DEFAULT_LEVEL_IDS,
    FeatureLevel,
    SliceFeatureStack,
    load_precomputed_features,
    save_feature_stack,
    stub_encode_volume,
)
from .errors import (
    BudgetExceeded,
    EmptyCompletion,
    EndpointError,
    EndpointTimeout,
    HttpError,
    InputFormatError,
    PipelineError,
    SchemaViolation,
    StudyMismatch,
    ValidationError,
)
from .gridding import output_grid_shape, window_bounds
from .llm_bridge import API_KEY_ENV, EndpointConfig, generate_all, generate_region_report
from .metrics import (
    MetricSummary,
    PairScore,
    bleu4,
    evaluate_pairs,
    meteor_lite,
    porter_stem,
    rouge_l,
    tokenize,
)
from .phantom import build_phantom, phantom_report, write_phantom
from .pooling import (
    TokenSequence,
    adaptive_pool_slice,
    build_token_sequence,
    global_tokens,
    load_token_sequence,
    region_tokens,
    save_token_sequence,
    select_region_slices,
)
from .prompting import (
    MAX_SEQUENCE_TOKENS,
    PromptBundle,
    build_prompt,
    count_budget_tokens,
    parse_attribute_report,
    read_prompt_bundle,
    render_attribute_report,
    render_prompt_text,
    write_prompt_bundle,
)
from .regions import REGION_IDS, region_header, region_name, region_slug
from .reports import (
    StructuredReport,
    merge_reports,
    parse_merged_report,
    split_report,
    split_sentences,
)
from .segtokens import (
    DEFAULT_SPATIAL_GRID,
    DEFAULT_WEIGHTS_SEED,
    ProjectionWeights,
    SegmentationTokenSet,
    downsample_mask_grid,
    make_projection_weights,
    mask_token,
    pool_mask_fractions,
    segmentation_tokens,
    spatial_token,
    weighted_token_mean,
)
from .volume_io import (
    RegionMaskSet,
    VolumeTensor,
    load_mask_set,
    load_nifti,
    load_raw_container,
    load_study,
    normalize_minmax,
    resize_volume,
    save_raw_container,
)

__version__ = "0.1.0"
