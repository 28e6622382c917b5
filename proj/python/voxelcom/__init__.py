from ._voxelcom import (
    __version__,
    allocate,
    expected_bits_per_dim,
    likelihood,
    psnr,
    read_rd_csv,
    ssim,
    validate_config,
)

__all__ = [
    "__version__",
    "allocate",
    "expected_bits_per_dim",
    "likelihood",
    "psnr",
    "read_rd_csv",
    "ssim",
    "validate_config",
]
