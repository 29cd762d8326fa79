"""Typed errors for the exporter."""


class ExporterError(Exception):
    exit_code = 3


class BackboneUnavailable(ExporterError):
    """The requested backbone cannot be constructed or its weights fetched."""

    exit_code = 2


class DecodeError(ExporterError):
    """An image (or mask) file could not be decoded; the message names it."""


class LayoutError(ExporterError):
    """The input folder does not follow the class-per-directory layout."""
