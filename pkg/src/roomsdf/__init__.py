"""roomsdf: multi-view indoor surface reconstruction.

Learns a signed distance field from posed RGB images plus surface-normal
priors, using a hybrid MLP + tri-plane geometry representation, SDF-based
volume rendering, and uncertainty-weighted normal supervision. Ships with an
analytic synthetic-scene harness so every component is testable against
closed-form ground truth.
"""

__version__ = "0.1.0"
