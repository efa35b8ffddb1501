from .export import ExportError, ExportJob, export_units

__all__ = ["ExportError", "ExportJob", "export_units"]
