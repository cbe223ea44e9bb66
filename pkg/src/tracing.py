"""OpenTelemetry wiring for long-running pipeline stages."""

from __future__ import annotations

import os
import sys

from opentelemetry import trace

from logging_utils import SERVICE_NAME
from settings import _as_bool

_INITIALIZED = False


def initialize_tracing(service: str = SERVICE_NAME) -> bool:
    """Install a console-exporting SDK provider when FOGMON_TRACE_CONSOLE is set.

    Returns True when an SDK provider was installed. Without it the API's
    no-op tracer is used and spans cost nothing.
    """
    global _INITIALIZED
    if _INITIALIZED:
        return True
    if not _as_bool(os.getenv("FOGMON_TRACE_CONSOLE"), False):
        return False
    if _as_bool(os.getenv("OTEL_SDK_DISABLED"), False):
        return False
    from opentelemetry.sdk.resources import Resource
    from opentelemetry.sdk.trace import TracerProvider
    from opentelemetry.sdk.trace.export import ConsoleSpanExporter, SimpleSpanProcessor

    provider = TracerProvider(resource=Resource.create({"service.name": service}))
    provider.add_span_processor(SimpleSpanProcessor(ConsoleSpanExporter(out=sys.stderr)))
    trace.set_tracer_provider(provider)
    _INITIALIZED = True
    return True


def get_tracer() -> trace.Tracer:
    return trace.get_tracer(SERVICE_NAME)


__all__ = ["initialize_tracing", "get_tracer"]
