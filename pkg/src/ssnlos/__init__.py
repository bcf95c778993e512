"""Confocal NLOS reconstruction with structure-sparsity regularization.

The package is organised bottom-up:

``volume``        grid geometry, containers, downsampling and the NLV1 format
``lct``           directional light-cone forward/adjoint operator and oracles
``regularizers``  structure-sparsity, local-SS and l1 penalties and proxes
``solvers``       FISTA, Lipschitz estimation and the Wiener baseline
``scenes``        surfel scenes, transient rendering and noise
``metrics``       map extraction, PSNR/SSIM and geometric error statistics
``images``        PGM/PPM encoding of albedo, depth and normal maps
``plotting``      optional matplotlib figures written next to the CSV reports
``selftest``      quick installation check behind ``ssnlos selftest``
``cli``           the ``ssnlos`` command line front end
"""

from ssnlos.volume import (
    DirectionalAlbedoVolume,
    ScanGrid,
    TransientVolume,
    VolumeMeta,
    downsample_transient,
    read_volume,
    write_volume,
)

__version__ = "0.1.0"

__all__ = [
    "DirectionalAlbedoVolume",
    "ScanGrid",
    "TransientVolume",
    "VolumeMeta",
    "downsample_transient",
    "read_volume",
    "write_volume",
]
