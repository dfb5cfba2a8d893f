"""Check-in parsing, preprocessing, splitting and synthetic corpora."""

from .archive import FORMAT_TAG, Dataset, load_dataset, save_dataset
from .categories import category_pool, fallback_id, match_categories
from .preprocess import PreprocessConfig, Vocabulary, preprocess, sequences_to_raw
from .records import (
    CheckinRecord,
    CheckinSequence,
    EmptyDatasetError,
    ParseError,
    ParseResult,
    RawCheckin,
    parse_checkin_file,
)
from .splits import FEW_SHOT_FRACTIONS, DatasetSplit, few_shot_subset, split_dataset
from .synthetic import SyntheticSpec, generate_synthetic

__all__ = [
    "FORMAT_TAG", "Dataset", "load_dataset", "save_dataset",
    "category_pool", "fallback_id", "match_categories",
    "PreprocessConfig", "Vocabulary", "preprocess", "sequences_to_raw",
    "CheckinRecord", "CheckinSequence", "EmptyDatasetError", "ParseError",
    "ParseResult", "RawCheckin", "parse_checkin_file",
    "FEW_SHOT_FRACTIONS", "DatasetSplit", "few_shot_subset", "split_dataset",
    "SyntheticSpec", "generate_synthetic",
]
