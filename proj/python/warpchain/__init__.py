"""Coarse-to-fine multimodal registration chain.

Thin python surface over the C++ core; rasters are HxWxC float64 numpy
arrays, deformation fields HxWx2 (displacements in pixels).
"""

from warpchain._core import (  # noqa: F401
    align_chain_files,
    bin_accuracy,
    build_scale_net,
    compose,
    criterion,
    descend,
    describe,
    downsample2,
    endpoint_error,
    gen_dataset,
    identity_field,
    laplacian_penalty,
    load_net,
    multires_align,
    net_forward,
    pck,
    random_field,
    read_f32r,
    sample_bilinear,
    save_net,
    upsample2,
    upsample_field,
    warp,
    write_f32r,
    xavier_init,
    ScaleNet,
)

__all__ = [
    "align_chain_files",
    "bin_accuracy",
    "build_scale_net",
    "compose",
    "criterion",
    "descend",
    "describe",
    "downsample2",
    "endpoint_error",
    "gen_dataset",
    "identity_field",
    "laplacian_penalty",
    "load_net",
    "multires_align",
    "net_forward",
    "pck",
    "random_field",
    "read_f32r",
    "sample_bilinear",
    "save_net",
    "upsample2",
    "upsample_field",
    "warp",
    "write_f32r",
    "xavier_init",
    "ScaleNet",
]
