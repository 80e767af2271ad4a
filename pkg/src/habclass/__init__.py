"""Transfer-learning experiments for harmful phytoplankton recognition.

Subpackages:
    data      -- dataset discovery, manifests, stratified splits, preprocessing
    models    -- pretrained CNN backbone registry with replaceable classifier heads
    training  -- linear probing / fine-tuning / combined training engine
    metrics   -- confusion matrix, accuracy, precision, recall
    runner    -- experiment orchestration, sweeps, persistence
    report    -- tables, confusion heatmaps, per-class bar charts
"""

__version__ = "0.1.0"
