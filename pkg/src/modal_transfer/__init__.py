"""Physics-informed feature selection for transfer learning on vibration data."""

__version__ = "0.1.0"
