"""SWNet: bimodal RGB+NIR camouflaged object segmentation."""

__version__ = "0.1.0"
