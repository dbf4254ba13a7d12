from .annotations import (
    DEFAULT_CLASS_MAP,
    Annotation,
    parse_annotation,
    read_annotation,
    save_annotation,
    write_annotation,
)
from .bands import BANDS, BandSelection, compose_bands
from .detections import format_detections, parse_detections, read_detections, write_detections
from .manifest import DatasetManifest, load_manifest, scan_dataset, write_manifest
from .patches import extract_patch
from .pnm import ImageBuffer, decode_pnm, encode_pnm, read_image, write_image
