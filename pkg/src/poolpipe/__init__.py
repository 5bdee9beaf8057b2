"""Planning and simulation of pooled-pipeline DNN serving on heterogeneous GPUs."""

__version__ = "0.1.0"
