"""Exception types shared across the toolkit."""


class BenchgapError(Exception):
    """Base class for all operational errors raised by this package."""


class CorpusError(BenchgapError):
    pass


class EmbedError(BenchgapError):
    pass


class StoreError(EmbedError):
    """Vector-store file is unreadable, truncated, or inconsistent."""


class GeometryError(BenchgapError):
    pass


class TsneError(BenchgapError):
    pass


class SplitError(BenchgapError):
    pass


class MetricsError(BenchgapError):
    pass


class JobError(BenchgapError):
    """An LLM generation job could not complete (transport or endpoint failure)."""


class CheckpointError(BenchgapError):
    pass


class ReportError(BenchgapError):
    pass


class ConfigError(BenchgapError):
    """Invalid pipeline configuration; treated as a usage error by the CLI."""
