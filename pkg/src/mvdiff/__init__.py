"""Desk-scale controllable multi-view video diffusion.

Subpackages cover the full pipeline: a float64 autodiff core (`autodiff`,
`kernels`), a synthetic driving world and its renderer (`world`), per-view
condition rasterization (`conditions`), a spatiotemporal latent codec
(`codec`), the joint view-time-space attention transformer (`backbone`), the
lightweight condition-control branch (`controller`), the training objective
and sampler (`diffusion`), evaluation metrics and benchmarks (`evalkit`),
and the command-line entry point (`cli`).
"""

__version__ = "0.1.0"
