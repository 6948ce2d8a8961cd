from .app import create_app
from .classifier import Classifier
from .schemas import ClassificationResponse

__all__ = ["ClassificationResponse", "Classifier", "create_app"]
