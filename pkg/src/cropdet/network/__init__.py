from .model import (
    PYRAMID_CHANNELS,
    BackboneFeatures,
    PyramidFeatures,
    RawDetections,
    RetinaUNetAg,
    backbone_stub,
    build_pyramid,
    forward_detect,
    init_backbone,
    init_heads,
    init_pyramid,
    postprocess_raw,
    run_heads,
    sigmoid,
)
from .ops import ConvSpec, add_elementwise, conv2d, relu, upsample_nearest_2x
from .weights import load_weights, save_weights
