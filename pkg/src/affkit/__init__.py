"""affkit: refine coarse open-vocabulary detections into actionable labels.

Submodules:
  kb          affordance knowledge graph (label sets, action chains)
  detection   detections, prompt strings, file formats, synthetic data
  projection  exact t-SNE for the 2D labeling canvas
  relabeler   nearest-exemplar relabeling by cosine similarity
  spatial     fuzzy spatial verification of door openers
  evaluation  IoU-matched per-class AP and mAP
  pipeline    batch orchestration and session persistence
  service     HTTP session API for the labeling UI
"""

__version__ = "0.1.0"
