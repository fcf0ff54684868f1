"""Weakly supervised LiDAR+camera segmentation lab.

Synthetic paired point-cloud/image scenes, active cluster-level labeling,
cross-modal association learning and EM-style self-training with pseudo-label
self-rectification, all on a small CPU-friendly dual-branch classifier.
"""

__version__ = "0.1.0"
