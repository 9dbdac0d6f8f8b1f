"""sketchmesh: single-sketch 3D mesh modeling.

A template icosphere is deformed by a learned decoder conditioned on a
shape code and a view code, supervised by differentiable silhouette
rendering at the predicted viewpoint, and regularized by a multi-view
adversarial critic fed with renders at randomly sampled camera poses.
"""

__version__ = "0.1.0"
