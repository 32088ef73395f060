"""FastAPI service wrapping the store, the calculators and the bench."""

from __future__ import annotations

import os
import tempfile
import threading

from fastapi import FastAPI, HTTPException

from .. import bench as bench_mod
from ..config import StoreConfig
from ..errors import StoreError, ValidationError
from ..store import SdaStore
from ..workload import WorkloadSpec
from . import schemas as S


class StoreRegistry:
    """Named open stores managed by one service process."""

    def __init__(self, data_dir: str):
        self.data_dir = data_dir
        self._stores: dict[str, tuple[SdaStore, str]] = {}
        self._lock = threading.Lock()

    def create(self, req: S.StoreCreateRequest) -> SdaStore:
        overrides = {
            k: v for k, v in (
                ("block_size", req.block_size),
                ("capacity_blocks", req.capacity_blocks),
                ("flush_entries", req.flush_entries),
                ("bloom_bits_per_key", req.bloom_bits_per_key),
                ("min_density", req.min_density),
            ) if v is not None
        }
        config = StoreConfig().with_overrides(**overrides)
        with self._lock:
            if req.name in self._stores:
                raise ValidationError(f"store {req.name!r} already open")
            if req.backend == "ram":
                store = SdaStore.create_ram(config)
            else:
                path = os.path.join(self.data_dir, req.name)
                if os.path.exists(os.path.join(path, "EPOCH")):
                    store = SdaStore.open(path)
                else:
                    store = SdaStore.create(path, config)
            self._stores[req.name] = (store, req.backend)
            return store

    def get(self, name: str) -> SdaStore:
        with self._lock:
            try:
                return self._stores[name][0]
            except KeyError:
                raise ValidationError(f"no open store named {name!r}") from None

    def backend(self, name: str) -> str:
        with self._lock:
            return self._stores[name][1]

    def names(self) -> list[str]:
        with self._lock:
            return sorted(self._stores)

    def close(self, name: str) -> None:
        with self._lock:
            store, _ = self._stores.pop(name)
            store.close()

    def close_all(self) -> None:
        with self._lock:
            for store, _ in self._stores.values():
                store.close()
            self._stores.clear()


def create_app(data_dir: str | None = None) -> FastAPI:
    data_dir = data_dir or os.environ.get(
        "STRATAKV_DATA", os.path.join(tempfile.gettempdir(), "stratakv"))
    os.makedirs(data_dir, exist_ok=True)
    app = FastAPI(title="stratakv", version="0.1.0")
    registry = StoreRegistry(data_dir)
    app.state.registry = registry

    def _fail(exc: StoreError) -> HTTPException:
        return HTTPException(status_code=409, detail=str(exc))

    # -- store lifecycle ---------------------------------------------------

    @app.post("/stores", response_model=S.StoreInfo)
    def create_store(req: S.StoreCreateRequest):
        try:
            store = registry.create(req)
        except StoreError as exc:
            raise _fail(exc)
        return _info(req.name, store)

    @app.get("/stores", response_model=list[S.StoreInfo])
    def list_stores():
        return [_info(name, registry.get(name)) for name in registry.names()]

    @app.delete("/stores/{name}")
    def close_store(name: str):
        try:
            registry.get(name)
        except StoreError as exc:
            raise _fail(exc)
        registry.close(name)
        return {"closed": name}

    def _info(name: str, store: SdaStore) -> S.StoreInfo:
        stats = store.stats()
        return S.StoreInfo(name=name, backend=registry.backend(name),
                           versions=len(store.tree),
                           stored_entries=stats.stored_entries,
                           buffer_entries=stats.buffer_entries)

    # -- data plane -----------------------------------------------------------

    @app.put("/stores/{name}/kv", status_code=204)
    def put_kv(name: str, req: S.PutRequest):
        try:
            registry.get(name).put(S.unb64(req.key), S.unb64(req.value), req.version)
        except StoreError as exc:
            raise _fail(exc)

    @app.post("/stores/{name}/kv/delete", status_code=204)
    def delete_kv(name: str, req: S.DeleteKeyRequest):
        try:
            registry.get(name).delete_key(S.unb64(req.key), req.version)
        except StoreError as exc:
            raise _fail(exc)

    @app.get("/stores/{name}/kv", response_model=S.GetResponse)
    def get_kv(name: str, key: str, version: int):
        try:
            value = registry.get(name).get(S.unb64(key), version)
        except StoreError as exc:
            raise _fail(exc)
        if value is None:
            return S.GetResponse(found=False)
        return S.GetResponse(found=True, value=S.b64(value))

    @app.post("/stores/{name}/range", response_model=S.RangeResponse)
    def range_kv(name: str, req: S.RangeRequest):
        try:
            rows = registry.get(name).range_query(
                S.unb64(req.start),
                S.unb64(req.end) if req.end is not None else None,
                req.version, limit=req.limit)
        except StoreError as exc:
            raise _fail(exc)
        return S.RangeResponse(items=[
            S.RangeItem(key=S.b64(k), value=S.b64(v)) for k, v in rows])

    # -- versions ----------------------------------------------------------------

    @app.post("/stores/{name}/versions/clone", response_model=S.CloneResponse)
    def clone_version(name: str, req: S.CloneRequest):
        try:
            child = registry.get(name).clone(req.parent)
        except StoreError as exc:
            raise _fail(exc)
        return S.CloneResponse(version=child)

    @app.post("/stores/{name}/versions/delete", status_code=204)
    def delete_version(name: str, req: S.DeleteVersionRequest):
        try:
            registry.get(name).delete_version(req.version)
        except StoreError as exc:
            raise _fail(exc)

    @app.get("/stores/{name}/versions", response_model=S.VersionTreeResponse)
    def version_tree(name: str):
        try:
            store = registry.get(name)
        except StoreError as exc:
            raise _fail(exc)
        nodes = [
            S.VersionNode(id=v, parent=store.tree.parent(v),
                          deleted=store.tree.is_deleted(v))
            for v in store.tree.all_versions()
        ]
        return S.VersionTreeResponse(versions=nodes)

    # -- maintenance, stats, audit ----------------------------------------------

    @app.post("/stores/{name}/flush", status_code=204)
    def flush_store(name: str):
        try:
            registry.get(name).flush()
        except StoreError as exc:
            raise _fail(exc)

    @app.get("/stores/{name}/stats", response_model=S.StatsResponse)
    def store_stats(name: str):
        try:
            store = registry.get(name)
        except StoreError as exc:
            raise _fail(exc)
        stats = store.stats()
        c = store.device.counters
        return S.StatsResponse(
            total_written=stats.total_written,
            stored_entries=stats.stored_entries,
            buffer_entries=stats.buffer_entries,
            dup_factor=stats.dup_factor, per_level=stats.per_level,
            reads=c.reads, writes=c.writes,
            seq_reads=c.seq_reads, seq_writes=c.seq_writes)

    @app.post("/stores/{name}/audit", response_model=S.AuditResponse)
    def audit_open_store(name: str):
        try:
            return S.AuditResponse(violations=registry.get(name).audit())
        except StoreError as exc:
            raise _fail(exc)

    # -- calculators -----------------------------------------------------------------

    @app.get("/calc/lfs-rho", response_model=S.CalcResponse)
    def calc_lfs_rho(mu: str):
        try:
            return S.CalcResponse(value=bench_mod.lfs_rho(mu))
        except (StoreError, ValueError) as exc:
            raise HTTPException(status_code=422, detail=str(exc))

    @app.get("/calc/cow-slowdown", response_model=S.CalcResponse)
    def calc_cow_slowdown(b: str, rho: str):
        try:
            return S.CalcResponse(value=bench_mod.cow_slowdown(b, rho))
        except (StoreError, ValueError) as exc:
            raise HTTPException(status_code=422, detail=str(exc))

    # -- bench --------------------------------------------------------------------------

    @app.post("/bench/run", response_model=S.BenchRunResponse)
    def bench_run(req: S.BenchRunRequest):
        spec = WorkloadSpec(
            seed=req.seed, total_inserts=req.inserts,
            clone_interval=req.clone_interval,
            range_query_interval=req.range_query_interval,
            range_query_size=req.range_query_size,
            block_size=req.block_size)
        config = StoreConfig(block_size=req.block_size,
                             flush_entries=req.flush_entries)
        workdir = None
        if req.backend == "file":
            workdir = tempfile.mkdtemp(prefix="bench-", dir=registry.data_dir)
        result = bench_mod.run_bench(req.target, spec, verify=req.verify,
                                     config=config, backend=req.backend,
                                     workdir=workdir, window=req.window)
        summaries = [
            S.BenchTargetSummary(
                target=t.target, blocks_read=t.total.reads,
                blocks_written=t.total.writes,
                insert_reads=t.insert_reads, insert_writes=t.insert_writes,
                sequential_fraction=t.total.sequential_fraction(),
                stored_entries=t.stored_entries, dup_factor=t.dup_factor,
                level_counts=t.level_counts, mismatches=t.mismatches,
                audit_violations=t.audit_violations,
                elapsed_seconds=t.elapsed_seconds)
            for t in result.targets.values()
        ]
        exit_code = 0
        if result.mismatches:
            exit_code = 1
        elif result.violations:
            exit_code = 2
        return S.BenchRunResponse(ok=exit_code == 0, exit_code=exit_code,
                                  summaries=summaries, csv=result.to_csv(),
                                  plot=result.plot_series())

    @app.post("/bench/audit", response_model=S.AuditResponse)
    def bench_audit(req: S.BenchAuditRequest):
        try:
            return S.AuditResponse(violations=bench_mod.audit_store(req.store_dir))
        except StoreError as exc:
            raise HTTPException(status_code=404, detail=str(exc))

    @app.post("/bench/crash-test", response_model=S.CrashTestResponse)
    def bench_crash_test(req: S.CrashTestRequest):
        workdir = req.workdir or tempfile.mkdtemp(prefix="crash-",
                                                  dir=registry.data_dir)
        report = bench_mod.crash_test(workdir, inserts=req.inserts,
                                      seed=req.seed,
                                      kill_points=req.kill_points)
        return S.CrashTestResponse(ok=report.passed,
                                   commits_observed=report.commits_observed,
                                   runs=report.runs, failures=report.failures)

    @app.get("/health")
    def health():
        return {"status": "ok"}

    return app
