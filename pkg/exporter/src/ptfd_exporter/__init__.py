"""Export vision-transformer patch tokens from image folders as PTFD dumps."""

from .backbones import Backbone, load_backbone
from .errors import BackboneUnavailable, DecodeError, ExporterError, LayoutError
from .export import ExportManifest, build_manifest, export

__version__ = "0.1.0"

__all__ = [
    "Backbone",
    "load_backbone",
    "ExportManifest",
    "build_manifest",
    "export",
    "ExporterError",
    "BackboneUnavailable",
    "DecodeError",
    "LayoutError",
    "__version__",
]
