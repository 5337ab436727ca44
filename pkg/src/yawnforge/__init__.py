"""yawnforge: semi-automated frame-level labeling for driver-yawning video corpora.

The pipeline decodes videos into frames, locates the driver's face and mouth,
pre-labels every frame with a small mouth-state CNN, routes the machine labels
through a human verification service in batches of 64, and exports the
verified labels as classification / detection training datasets with
per-video statistics.
"""

__version__ = "0.1.0"
