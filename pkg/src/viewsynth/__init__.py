"""viewsynth: novel view synthesis from posed images and a triangle-mesh scaffold.

Pipeline in one line: render a depth map of the mesh from the target camera,
unproject every pixel to a surface point, gather the feature vectors of all
source images that see the point, aggregate them into one feature per pixel,
and decode the feature image to RGB with a residual U-Net stack. Everything is
differentiable through a small reverse-mode tape, so the encoder, aggregator,
and renderer train end to end.
"""

__version__ = "0.1.0"
