'''Cross-modal retrieval with conformal calibration under missing modalities.'''

__version__ = "0.1.0"
