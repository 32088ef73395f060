"""Pydantic request/response models for the HTTP service.

Keys and values travel base64-encoded; version ids are plain integers.
"""

from __future__ import annotations

import base64

from pydantic import BaseModel, Field, field_validator


def b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def unb64(text: str) -> bytes:
    return base64.b64decode(text.encode("ascii"))


class StoreCreateRequest(BaseModel):
    name: str = Field(pattern=r"^[A-Za-z0-9_.-]{1,64}$")
    backend: str = "file"
    block_size: int | None = None
    capacity_blocks: int | None = None
    flush_entries: int | None = None
    bloom_bits_per_key: int | None = None
    min_density: str | None = None

    @field_validator("backend")
    @classmethod
    def _backend_known(cls, value: str) -> str:
        if value not in ("file", "ram"):
            raise ValueError("backend must be 'file' or 'ram'")
        return value


class StoreInfo(BaseModel):
    name: str
    backend: str
    versions: int
    stored_entries: int
    buffer_entries: int


class PutRequest(BaseModel):
    key: str  # base64
    value: str  # base64
    version: int


class DeleteKeyRequest(BaseModel):
    key: str
    version: int


class GetResponse(BaseModel):
    found: bool
    value: str | None = None


class RangeRequest(BaseModel):
    start: str
    end: str | None = None
    version: int
    limit: int | None = None


class RangeItem(BaseModel):
    key: str
    value: str


class RangeResponse(BaseModel):
    items: list[RangeItem]


class CloneRequest(BaseModel):
    parent: int


class CloneResponse(BaseModel):
    version: int


class DeleteVersionRequest(BaseModel):
    version: int


class VersionNode(BaseModel):
    id: int
    parent: int | None
    deleted: bool


class VersionTreeResponse(BaseModel):
    versions: list[VersionNode]


class StatsResponse(BaseModel):
    total_written: int
    stored_entries: int
    buffer_entries: int
    dup_factor: float
    per_level: dict[int, int]
    reads: int
    writes: int
    seq_reads: int
    seq_writes: int


class AuditResponse(BaseModel):
    violations: list[str]


class CalcResponse(BaseModel):
    value: float


class BenchRunRequest(BaseModel):
    target: str = "sda"
    inserts: int = 100_000
    seed: int = 1
    verify: bool = False
    backend: str = "ram"
    block_size: int = 32768
    flush_entries: int = 4096
    clone_interval: int = 100_000
    range_query_interval: int = 10_000
    range_query_size: int = 1000
    window: int | None = None

    @field_validator("target")
    @classmethod
    def _target_known(cls, value: str) -> str:
        if value not in ("sda", "cow", "both"):
            raise ValueError("target must be sda, cow or both")
        return value


class BenchTargetSummary(BaseModel):
    target: str
    blocks_read: int
    blocks_written: int
    insert_reads: int
    insert_writes: int
    sequential_fraction: float
    stored_entries: int
    dup_factor: float
    level_counts: dict[int, int]
    mismatches: list[str]
    audit_violations: list[str]
    elapsed_seconds: float


class BenchRunResponse(BaseModel):
    ok: bool
    exit_code: int
    summaries: list[BenchTargetSummary]
    csv: str
    plot: str | None = None


class BenchAuditRequest(BaseModel):
    store_dir: str


class CrashTestRequest(BaseModel):
    inserts: int = 10_000
    seed: int = 7
    kill_points: str = "all"
    workdir: str | None = None


class CrashTestResponse(BaseModel):
    ok: bool
    commits_observed: int
    runs: int
    failures: list[str]


class ErrorResponse(BaseModel):
    detail: str
