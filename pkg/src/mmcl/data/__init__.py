from mmcl.data.dataset import (
    LABEL_FEATURE,
    PairedDataset,
    append_label_feature,
    morphometric_names,
    non_morphometric_names,
    prepare,
    subsample_balanced,
)
from mmcl.data.io import load_dataset, save_dataset
from mmcl.data.schema import FeatureSpec, TabularSchema
from mmcl.data.synthetic import SyntheticConfig, generate_synthetic
from mmcl.data.tabular import (
    TabularMatrix,
    decode_one_hot,
    impute,
    impute_with_trace,
    load_tabular,
    normalize,
    one_hot,
    one_hot_rows,
)

__all__ = [
    "LABEL_FEATURE", "PairedDataset", "append_label_feature", "morphometric_names",
    "non_morphometric_names", "prepare", "subsample_balanced", "load_dataset",
    "save_dataset", "FeatureSpec", "TabularSchema", "SyntheticConfig",
    "generate_synthetic", "TabularMatrix", "decode_one_hot", "impute",
    "impute_with_trace", "load_tabular", "normalize", "one_hot", "one_hot_rows",
]
