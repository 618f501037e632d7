"""Feature exporter for the retrieval engine's store formats."""

__version__ = "0.1.0"

from .encoders import ClipEncoder, HashEncoder, get_encoder
from .jobs import ExportJob, export_images, export_null_text, export_texts, load_listing
from .ueb import ExportError, write_ueb

__all__ = [
    "ClipEncoder",
    "ExportError",
    "ExportJob",
    "HashEncoder",
    "export_images",
    "export_null_text",
    "export_texts",
    "get_encoder",
    "load_listing",
    "write_ueb",
]
