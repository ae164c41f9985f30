"""Gaussian-surfel scene synthesis on labeled, untextured meshes.

The package turns a semantically labeled triangle mesh plus a camera path
into a surface-aligned Gaussian-surfel scene: sparse key views are produced
by a backward warp-and-outpaint loop, intermediate views are completed with
appearance-guided inpainting, and a global alignment step harmonizes
exposure across views.  Generator backends are pluggable; a deterministic
procedural oracle enables exact end-to-end verification.
"""

__version__ = "0.1.0"
