"""Self-hosted annotation service: qualification tests, assignment issuance,
audio delivery, and append-only answer persistence behind an HTTP+JSON API."""

from gradrel.service.config import ServiceConfig
from gradrel.service.store import AnnotationStore

__all__ = ["AnnotationStore", "ServiceConfig"]
