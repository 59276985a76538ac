from src.dataio.exporter import export_image, quantize, save_raw
from src.dataio.loaders import (
    load_cifar10,
    load_idx,
    load_image,
    load_raw,
    resolve_dataset,
    select_classes,
)
from src.dataio.serialization import load_bundle, save_bundle
