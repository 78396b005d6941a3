"""Exception hierarchy shared by every stage of the engine."""

from __future__ import annotations


class TaskDSError(Exception):
    """Base class for all errors raised by taskds."""


# ingest
class UndecodableInput(TaskDSError):
    pass


class EmptyDocument(TaskDSError):
    pass


class CorruptCacheEntry(TaskDSError):
    pass


# model / provider clients
class ModelUnavailable(TaskDSError):
    pass


class UnparseableResponse(TaskDSError):
    pass


class NoValidRecords(TaskDSError):
    pass


class ProviderUnavailable(TaskDSError):
    pass


# vectors
class DimensionMismatch(TaskDSError):
    pass


class ZeroVector(TaskDSError):
    pass


class EmptyIndex(TaskDSError):
    pass


# graph
class DanglingRecord(TaskDSError):
    pass


class MissingVector(TaskDSError):
    pass


class UnknownNode(TaskDSError):
    pass


class EmptyAfterNormalization(TaskDSError):
    pass


class JudgeUnavailable(TaskDSError):
    pass


class EmptyGraph(TaskDSError):
    pass


# query
class NoConvergence(TaskDSError):
    pass


# operations
class ConfigError(TaskDSError):
    pass


class SnapshotError(TaskDSError):
    pass


class EmptyCorpus(TaskDSError):
    pass
