"""Export image folders as SGVB embedding banks."""

from .export import ExportError, ExportManifest, export, scan_folder, write_reference
from .sgvb import write_bank

__version__ = "0.1.0"
