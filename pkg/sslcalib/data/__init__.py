from .dataset import (
    Dataset, DatasetError, LabeledSplit, UnlabeledSplit, SPLITS,
    make_two_moons, make_blobs, split, read_csv, load_csv_dataset, write_dataset, read_dataset,
)
from .augment import AugmentationPolicy, augment_weak, augment_strong

__all__ = [
    "Dataset", "DatasetError", "LabeledSplit", "UnlabeledSplit", "SPLITS",
    "make_two_moons", "make_blobs", "split", "read_csv", "load_csv_dataset", "write_dataset", "read_dataset",
    "AugmentationPolicy", "augment_weak", "augment_strong",
]
