"""HTTP control plane: start runs, watch their event streams, send
feedback, and adjust thresholds while a run is live.

Design notes that matter for correctness:

* Each run is owned by exactly one worker thread. API mutations (feedback,
  threshold changes) are queued as commands and executed by the worker
  between environment steps, so a verdict submitted at step N is fully
  applied before step N+1 begins. Once the worker has exited the run is
  immutable and such requests are rejected with a conflict.
* Events are appended to the run's JSONL log before they are fanned out to
  subscribers, so a replay-then-follow client deduplicating by sequence
  number can never miss or double-count an event.
* Step events are fanned out in batches of STEP_FLUSH_EVERY; alerts and
  every other kind flush the pending batch first and go out immediately,
  which preserves sequence order on the wire.
* On startup the service scans its data directory. A log whose last record
  is the final metrics event is listed as completed; a truncated or corrupt
  log marks the run failed. Either way the event stream stays replayable.
"""

from __future__ import annotations

import json
import os
import queue
import threading
import time
import uuid
from concurrent.futures import Future
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, StreamingResponse
from fastapi.staticfiles import StaticFiles

from . import _kernels
from .events import EventRecord, JsonlEventLog, read_events
from .governance import FeedbackEvent, GovernanceError
from .pipeline import RunConfig, RunEngine

DEFAULT_PORT = 8080
DEFAULT_DATA_DIR = "./runs"
STEP_FLUSH_EVERY = 10
_END = object()

_ERROR_STATUS = {"invalid_input": 400, "not_found": 404, "conflict": 409}


class RunHandle:
    """One run: engine, worker thread, event log, and subscriber fanout."""

    def __init__(self, cfg: RunConfig, data_dir: Path):
        self.cfg = cfg
        self.run_id = cfg.run_id
        self.status = "pending"
        self.paused = False
        self.error: str | None = None
        self.created_at = time.time()
        self.final_metrics: dict | None = None
        self.final_extras: dict | None = None
        self.seq = 0
        self.log_path = data_dir / f"{cfg.run_id}.jsonl"
        self.meta_path = data_dir / f"{cfg.run_id}.meta.json"
        self._log: JsonlEventLog | None = JsonlEventLog(self.log_path)
        self._cmds: queue.Queue = queue.Queue()
        self._subs: list[queue.Queue] = []
        self._subs_lock = threading.Lock()
        self._step_buffer: list[EventRecord] = []
        self._closed = False
        self._close_lock = threading.Lock()
        self.engine: RunEngine | None = RunEngine(cfg, emit=self._emit, seed_key=(cfg.seed,))
        self._thread = threading.Thread(
            target=self._work, name=f"run-{cfg.run_id}", daemon=True
        )

    @classmethod
    def recovered(
        cls,
        run_id: str,
        data_dir: Path,
        status: str,
        cfg: RunConfig | None,
        final_metrics: dict | None,
        final_extras: dict | None,
        last_seq: int,
        error: str | None = None,
    ) -> "RunHandle":
        handle = cls.__new__(cls)
        handle.cfg = cfg or RunConfig(run_id=run_id)
        handle.run_id = run_id
        handle.status = status
        handle.paused = False
        handle.error = error
        handle.created_at = (data_dir / f"{run_id}.jsonl").stat().st_mtime
        handle.final_metrics = final_metrics
        handle.final_extras = final_extras
        handle.seq = last_seq
        handle.log_path = data_dir / f"{run_id}.jsonl"
        handle.meta_path = data_dir / f"{run_id}.meta.json"
        handle._log = None
        handle._cmds = queue.Queue()
        handle._subs = []
        handle._subs_lock = threading.Lock()
        handle._step_buffer = []
        handle._closed = True
        handle._close_lock = threading.Lock()
        handle.engine = None
        handle._thread = None
        return handle

    # -- lifecycle ---------------------------------------------------------

    def start(self) -> None:
        self._write_meta()
        self._thread.start()

    def _work(self) -> None:
        engine = self.engine
        try:
            self.status = "running"
            engine.prepare()
            interval = (
                1.0 / self.cfg.steps_per_second if self.cfg.steps_per_second else 0.0
            )
            next_tick = time.monotonic()
            while True:
                self._drain_commands()
                if self.paused:
                    time.sleep(0.02)
                    continue
                if interval:
                    now = time.monotonic()
                    if now < next_tick:
                        time.sleep(min(next_tick - now, 0.05))
                        continue
                    next_tick += interval
                if not engine.tick():
                    break
            metrics, extras = engine.finalize()
            from .pipeline import _metrics_payload

            self.final_metrics = _metrics_payload(metrics)
            self.final_extras = extras
            self.status = "completed"
        except Exception as exc:  # surfaced via run status, never raised
            self.error = f"{type(exc).__name__}: {exc}"
            self.status = "failed"
        finally:
            with self._close_lock:
                self._drain_commands()
                self._closed = True
            self._flush_steps()
            with self._subs_lock:
                for sub in self._subs:
                    sub.put(_END)
            self._write_meta()
            if self._log is not None:
                self._log.close()

    def _drain_commands(self) -> None:
        while True:
            try:
                fn, fut = self._cmds.get_nowait()
            except queue.Empty:
                return
            try:
                fut.set_result(fn())
            except Exception as exc:
                fut.set_exception(exc)

    def call(self, fn):
        """Run fn with happens-before the next environment step.

        Rejected once the worker has exited: a mutation landing after the
        final metrics event would desync the log from the reported run.
        """
        with self._close_lock:
            if self._closed:
                raise GovernanceError("conflict", "run is no longer live")
            fut: Future = Future()
            self._cmds.put((fn, fut))
        return fut.result(timeout=30)

    # -- event fanout ------------------------------------------------------

    def _emit(self, kind: str, payload: dict) -> None:
        self.seq += 1
        record = EventRecord(
            run_id=self.run_id,
            seq=self.seq,
            kind=kind,
            payload=payload,
            sim_time=self.engine.clock.now(),
            wall_time=time.time(),
        )
        self._log.append(record)
        if kind == "step":
            self._step_buffer.append(record)
            if len(self._step_buffer) >= STEP_FLUSH_EVERY:
                self._flush_steps()
        else:
            self._flush_steps()
            self._push(record)

    def _flush_steps(self) -> None:
        if not self._step_buffer:
            return
        pending, self._step_buffer = self._step_buffer, []
        for record in pending:
            self._push(record)

    def _push(self, record: EventRecord) -> None:
        with self._subs_lock:
            for sub in self._subs:
                sub.put(record)

    def subscribe(self) -> queue.Queue:
        sub: queue.Queue = queue.Queue()
        with self._subs_lock:
            self._subs.append(sub)
        return sub

    def unsubscribe(self, sub: queue.Queue) -> None:
        with self._subs_lock:
            if sub in self._subs:
                self._subs.remove(sub)

    @property
    def closed(self) -> bool:
        return self._closed

    # -- views -------------------------------------------------------------

    def brief(self) -> dict:
        info = {
            "run_id": self.run_id,
            "status": self.status,
            "paused": self.paused,
            "created_at": self.created_at,
        }
        if self.engine is not None:
            info.update(self.engine.live_metrics())
        return info

    def detail(self) -> dict:
        info = self.brief()
        info["config"] = self.cfg.to_dict()
        if self.error:
            info["error"] = self.error
        if self.final_metrics is not None:
            info["metrics"] = self.final_metrics
            info["extras"] = self.final_extras
        return info

    def _write_meta(self) -> None:
        meta = {
            "run_id": self.run_id,
            "status": self.status,
            "created_at": self.created_at,
            "config": self.cfg.to_dict(),
        }
        if self.error:
            meta["error"] = self.error
        if self.final_metrics is not None:
            meta["metrics"] = self.final_metrics
        self.meta_path.write_text(json.dumps(meta, indent=2) + "\n")


class ServiceState:
    def __init__(self, data_dir: str):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.runs: dict[str, RunHandle] = {}
        self.lock = threading.Lock()

    def get(self, run_id: str) -> RunHandle:
        handle = self.runs.get(run_id)
        if handle is None:
            raise GovernanceError("not_found", f"no run {run_id!r}")
        return handle

    def recover(self) -> None:
        """Rebuild the run table from whatever logs survived a restart."""
        for log_path in sorted(self.data_dir.glob("*.jsonl")):
            run_id = log_path.stem
            if run_id in self.runs:
                continue
            records, clean = read_events(log_path)
            if clean and not records:
                continue
            cfg = None
            meta: dict = {}
            meta_path = self.data_dir / f"{run_id}.meta.json"
            if meta_path.exists():
                try:
                    meta = json.loads(meta_path.read_text())
                except ValueError:
                    meta = {}
            cfg_dict = meta.get("config")
            if cfg_dict is None and records and records[0].kind == "metrics":
                cfg_dict = records[0].payload.get("config")
            if cfg_dict is not None:
                try:
                    cfg = RunConfig.from_dict(cfg_dict)
                except (TypeError, ValueError):
                    cfg = None
            final_metrics = None
            final_extras = None
            status = "failed"
            error = None if clean else "event log truncated or corrupt"
            # a torn tail invalidates the run even if the parsed prefix
            # happens to end at a final metrics event
            if clean and records[-1].kind == "metrics" and records[-1].payload.get("final"):
                status = "completed"
                final_metrics = records[-1].payload.get("metrics")
                final_extras = records[-1].payload.get("extras")
            elif clean:
                error = "interrupted before completion"
            last_seq = records[-1].seq if records else 0
            self.runs[run_id] = RunHandle.recovered(
                run_id,
                self.data_dir,
                status,
                cfg,
                final_metrics,
                final_extras,
                last_seq,
                error,
            )


def _sse_frame(record: EventRecord) -> str:
    return f"id: {record.seq}\nevent: {record.kind}\ndata: {record.to_json()}\n\n"


def _event_stream(handle: RunHandle, after: int):
    sub = handle.subscribe() if not handle.closed else None
    try:
        last = after
        records, _ = read_events(handle.log_path)
        for record in records:
            if record.seq > last:
                yield _sse_frame(record)
                last = record.seq
        if sub is None:
            yield "event: end\ndata: {}\n\n"
            return
        while True:
            try:
                item = sub.get(timeout=0.5)
            except queue.Empty:
                if handle.closed:
                    break
                continue
            if item is _END:
                break
            if item.seq > last:
                yield _sse_frame(item)
                last = item.seq
        # Drain anything that raced the close.
        while True:
            try:
                item = sub.get_nowait()
            except queue.Empty:
                break
            if item is not _END and item.seq > last:
                yield _sse_frame(item)
                last = item.seq
        yield "event: end\ndata: {}\n\n"
    finally:
        if sub is not None:
            handle.unsubscribe(sub)


def create_app(data_dir: str | None = None) -> FastAPI:
    state = ServiceState(data_dir or os.environ.get("MAS_DATA_DIR", DEFAULT_DATA_DIR))
    state.recover()
    app = FastAPI(title="moral-anchor control plane")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
        expose_headers=["*"],
    )
    app.state.mas = state

    @app.exception_handler(GovernanceError)
    async def governance_error(request: Request, exc: GovernanceError):
        status = _ERROR_STATUS.get(exc.code, 400)
        return JSONResponse(
            status_code=status,
            content={"error": {"code": exc.code, "message": str(exc)}},
        )

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "backend": _kernels.BACKEND}

    @app.post("/api/runs", status_code=201)
    def create_run(payload: dict):
        data = dict(payload or {})
        if not data.get("run_id"):
            data["run_id"] = f"r-{uuid.uuid4().hex[:8]}"
        try:
            cfg = RunConfig.from_dict(data)
            cfg.validate()
        except (TypeError, ValueError) as exc:
            raise GovernanceError("invalid_input", str(exc)) from exc
        with state.lock:
            if cfg.run_id in state.runs or (state.data_dir / f"{cfg.run_id}.jsonl").exists():
                raise GovernanceError("conflict", f"run {cfg.run_id!r} already exists")
            handle = RunHandle(cfg, state.data_dir)
            state.runs[cfg.run_id] = handle
        handle.start()
        return {"run_id": cfg.run_id, "status": handle.status}

    @app.get("/api/runs")
    def list_runs():
        with state.lock:
            handles = sorted(state.runs.values(), key=lambda h: h.created_at)
        return {"runs": [h.brief() for h in handles]}

    @app.get("/api/runs/{run_id}")
    def get_run(run_id: str):
        return state.get(run_id).detail()

    @app.get("/api/runs/{run_id}/events")
    def run_events(run_id: str, request: Request, from_seq: int = 0):
        handle = state.get(run_id)
        header = request.headers.get("last-event-id")
        if header:
            try:
                from_seq = max(from_seq, int(header))
            except ValueError:
                pass
        return StreamingResponse(
            _event_stream(handle, from_seq),
            media_type="text/event-stream",
            headers={"Cache-Control": "no-cache", "X-Accel-Buffering": "no"},
        )

    @app.post("/api/runs/{run_id}/alerts/{alert_id}/feedback")
    def run_feedback(run_id: str, alert_id: str, payload: dict):
        handle = state.get(run_id)
        if handle.engine is None:
            raise GovernanceError("conflict", "run state was not recovered; feedback closed")
        verdict = (payload or {}).get("verdict")
        if not isinstance(verdict, str):
            raise GovernanceError("invalid_input", "verdict is required")
        fb = FeedbackEvent(alert_id=alert_id, verdict=verdict)
        return handle.call(lambda: handle.engine.record_feedback(fb))

    @app.patch("/api/runs/{run_id}/config")
    def patch_config(run_id: str, payload: dict):
        handle = state.get(run_id)
        data = payload or {}
        allowed = {"theta_u", "theta_a", "paused"}
        unknown = set(data) - allowed
        if unknown:
            raise GovernanceError("invalid_input", f"unsupported fields: {sorted(unknown)}")
        out = {"run_id": run_id}
        if "paused" in data:
            if not isinstance(data["paused"], bool):
                raise GovernanceError("invalid_input", "paused must be a boolean")
            if handle.closed:
                raise GovernanceError("conflict", "run is no longer live")
            handle.paused = data["paused"]
        theta_u = data.get("theta_u")
        theta_a = data.get("theta_a")
        if theta_u is not None or theta_a is not None:
            if handle.engine is None:
                raise GovernanceError("conflict", "run state was not recovered")
            for name, value in (("theta_u", theta_u), ("theta_a", theta_a)):
                if value is not None and not isinstance(value, (int, float)):
                    raise GovernanceError("invalid_input", f"{name} must be a number")
            out.update(
                handle.call(
                    lambda: handle.engine.update_thresholds(theta_u=theta_u, theta_a=theta_a)
                )
            )
        out["paused"] = handle.paused
        return out

    # Built dashboard bundle, when present. Mounted last so the API routes
    # above win; without a bundle the root just explains where the API is.
    static_dir = Path(__file__).resolve().parent / "static"
    if (static_dir / "index.html").is_file():
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="static")
    else:

        @app.get("/")
        def root():
            return {"service": "moral-anchor control plane", "api": "/api/runs"}

    return app


def serve(host: str = "0.0.0.0", port: int | None = None, data_dir: str | None = None) -> None:
    import uvicorn

    if port is None:
        port = int(os.environ.get("MAS_PORT", DEFAULT_PORT))
    uvicorn.run(create_app(data_dir), host=host, port=port, log_level="info")
