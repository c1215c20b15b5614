"""HTTP service for interactive exploration and the web UI.

State lives under a work directory: one subdirectory per session (persisted
trace, exported heatmaps/masks, the uploaded annotation) and one per stored
token. Completed traces are immutable, so concurrent reads need no locking;
the only guarded state is the one-optimization-job-per-session rule.

Every artifact byte served here is produced by the same library writers the
CLI uses, so HTTP responses and direct library calls are interchangeable.
"""
import io
import json
import threading
import uuid
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.responses import FileResponse, JSONResponse, StreamingResponse
from PIL import Image
from pydantic import BaseModel, Field

from .backends import get_backend
from .errors import OvamError
from .heatmaps import SelectionConfig, compute_ovam, export_heatmap, heatmap_stats
from .masks import BinarizationParams, make_pseudo_mask, save_mask
from .optimizer import OptimizerConfig, TrainingPair, evaluate_loss, optimize_tokens
from .tokens import init_attribution_tokens, load_token_file, save_token_file
from .trace import TokenEmbeddingMatrix
from .trace_io import save_trace


class SessionRequest(BaseModel):
    prompt: str
    seed: int = 0
    steps: int | None = None


class HeatmapRequest(BaseModel):
    attribution_prompt: str | None = None
    token_id: str | None = None
    token_index: int | None = None
    tau: float = Field(default=0.4)
    selection: dict | None = None


class MaskRequest(BaseModel):
    attribution_prompt: str | None = None
    token_id: str | None = None
    token_index: int | None = None
    tau: float | None = None
    alpha: float | None = None
    crf: bool = True
    self_attention: bool = True
    selection: dict | None = None


class OptimizationRequest(BaseModel):
    session_ids: list[str]
    class_name: str
    config: dict = Field(default_factory=dict)


class TokenUpload(BaseModel):
    label: str
    rows: list[list[float]]
    token_labels: list[str] | None = None


def _selection_from(payload):
    if not payload:
        return SelectionConfig()
    spec = payload.get("timesteps", "all")
    if spec == "all":
        mode, pivot = "all", None
    else:
        mode, _, pivot = str(spec).partition(":")
        pivot = int(pivot) if pivot else None
    return SelectionConfig(
        blocks=tuple(payload["blocks"]) if payload.get("blocks") else None,
        timestep_mode=mode,
        timestep_pivot=pivot,
        heads=tuple(payload["heads"]) if payload.get("heads") else None,
    )


class Session:
    def __init__(self, session_id, trace, directory):
        self.id = session_id
        self.trace = trace
        self.directory = directory
        self.lock = threading.Lock()
        self.active_job = None
        self.counter = 0

    def next_artifact(self, stem):
        self.counter += 1
        return self.directory / f"{stem}_{self.counter:04d}"


class Job:
    def __init__(self, job_id, session_ids, class_name):
        self.id = job_id
        self.session_ids = session_ids
        self.class_name = class_name
        self.events = []
        self.done = False
        self.error = None
        self.token_id = None
        self.best_loss = None
        self.best_epoch = None
        self.condition = threading.Condition()

    def push(self, event):
        with self.condition:
            self.events.append(event)
            self.condition.notify_all()

    def finish(self, error=None):
        with self.condition:
            self.done = True
            self.error = error
            self.condition.notify_all()


def create_app(backend="toy", workdir=None, ui_dir=None):
    backend = get_backend(backend)
    workdir = Path(workdir or "ovam-workdir")
    (workdir / "sessions").mkdir(parents=True, exist_ok=True)
    (workdir / "tokens").mkdir(parents=True, exist_ok=True)

    app = FastAPI(title="ovam", version="0.1.0")
    sessions = {}
    jobs = {}
    registry_lock = threading.Lock()

    @app.exception_handler(OvamError)
    async def _ovam_error(request: Request, exc: OvamError):
        return JSONResponse(status_code=422, content={
            "error": type(exc).__name__, "message": str(exc)})

    def error(status, message):
        return JSONResponse(status_code=status, content={"message": message})

    def file_url(path):
        return "/files/" + str(Path(path).relative_to(workdir))

    def need_session(session_id):
        session = sessions.get(session_id)
        if session is None:
            raise LookupError(session_id)
        return session

    def resolve_tokens(req):
        if (req.attribution_prompt is None) == (req.token_id is None):
            raise OvamError("provide exactly one of attribution_prompt/token_id")
        if req.token_id is not None:
            token_dir = workdir / "tokens" / req.token_id
            if not (token_dir / "token.json").is_file():
                raise LookupError(req.token_id)
            matrix, _ = load_token_file(token_dir)
            index = req.token_index if req.token_index is not None \
                else min(1, matrix.n_tokens - 1)
            return matrix, index, True
        matrix = backend.encode_text(req.attribution_prompt)
        index = req.token_index if req.token_index is not None else 1
        if not 0 <= index < matrix.n_tokens:
            raise OvamError(
                f"token_index {index} out of range for {matrix.n_tokens} tokens")
        return matrix, index, False

    @app.get("/health")
    def health():
        return {"status": "ok", "backend": backend.backend_id}

    @app.post("/sessions")
    def create_session(req: SessionRequest):
        trace = backend.generate_with_trace(req.prompt, req.seed, req.steps)
        session_id = uuid.uuid4().hex[:12]
        directory = workdir / "sessions" / session_id
        save_trace(trace, directory / "trace")
        with registry_lock:
            sessions[session_id] = Session(session_id, trace, directory)
        return {
            "id": session_id,
            "image_url": file_url(directory / "trace" / "image.png"),
            "prompt": req.prompt,
            "seed": req.seed,
            "image_w": trace.image_w,
            "image_h": trace.image_h,
            "timesteps": list(trace.timesteps),
        }

    @app.get("/sessions")
    def list_sessions():
        return [{
            "id": s.id,
            "prompt": s.trace.prompt_text,
            "seed": s.trace.seed,
            "image_url": file_url(s.directory / "trace" / "image.png"),
        } for s in sessions.values()]

    @app.get("/sessions/{session_id}")
    def session_info(session_id: str):
        try:
            s = need_session(session_id)
        except LookupError:
            return error(404, f"unknown session {session_id}")
        return {
            "id": s.id,
            "prompt": s.trace.prompt_text,
            "seed": s.trace.seed,
            "image_url": file_url(s.directory / "trace" / "image.png"),
            "image_w": s.trace.image_w,
            "image_h": s.trace.image_h,
            "has_annotation": (s.directory / "annotation.png").is_file(),
        }

    @app.post("/sessions/{session_id}/heatmap")
    def session_heatmap(session_id: str, req: HeatmapRequest):
        try:
            s = need_session(session_id)
            tokens, index, _ = resolve_tokens(req)
        except LookupError as exc:
            return error(404, f"unknown id {exc}")
        if not 0 < req.tau <= 1:
            return error(422, f"tau must be in (0, 1], got {req.tau}")
        heat = compute_ovam(s.trace, tokens, _selection_from(req.selection))
        paths = export_heatmap(heat, index, s.next_artifact("heatmap"))
        return {
            "heatmap_url": file_url(paths["png"]),
            "raster_url": file_url(paths["raster"]),
            "meta_url": file_url(paths["meta"]),
            "token_label": heat.token_labels[index],
            "stats": heatmap_stats(heat.channel(index), req.tau),
        }

    @app.post("/sessions/{session_id}/mask")
    def session_mask(session_id: str, req: MaskRequest):
        try:
            s = need_session(session_id)
            tokens, index, optimized = resolve_tokens(req)
        except LookupError as exc:
            return error(404, f"unknown id {exc}")
        defaults = BinarizationParams.for_optimized_token() if optimized \
            else BinarizationParams.for_prompt()
        tau = req.tau if req.tau is not None else defaults.tau
        alpha = req.alpha if req.alpha is not None else defaults.alpha
        if not 0 < tau <= 1:
            return error(422, f"tau must be in (0, 1], got {tau}")
        if not 0 < alpha <= 1:
            return error(422, f"alpha must be in (0, 1], got {alpha}")
        params = BinarizationParams(tau=tau, alpha=alpha,
                                    use_self_attention=req.self_attention,
                                    use_crf=req.crf)
        mask = make_pseudo_mask(s.trace, tokens, index, params,
                                sel=_selection_from(req.selection))
        out = s.next_artifact("mask").with_suffix(".png")
        save_mask(mask, out, params)
        return {
            "mask_url": file_url(out),
            "area_fraction": mask.area_fraction,
            "tau": tau,
            "alpha": alpha,
        }

    @app.put("/sessions/{session_id}/annotation")
    async def put_annotation(session_id: str, request: Request):
        try:
            s = need_session(session_id)
        except LookupError:
            return error(404, f"unknown session {session_id}")
        body = await request.body()
        try:
            img = Image.open(io.BytesIO(body))
            img.load()
        except Exception:
            return error(422, "body must be a PNG image")
        if img.size != (s.trace.image_w, s.trace.image_h):
            return error(409, f"annotation is {img.size}, image is "
                              f"{(s.trace.image_w, s.trace.image_h)}")
        (s.directory / "annotation.png").write_bytes(body)
        return Response(status_code=204)

    @app.get("/sessions/{session_id}/annotation")
    def get_annotation(session_id: str):
        try:
            s = need_session(session_id)
        except LookupError:
            return error(404, f"unknown session {session_id}")
        path = s.directory / "annotation.png"
        if not path.is_file():
            return error(404, "no annotation uploaded")
        return FileResponse(path, media_type="image/png")

    def _store_token(matrix, label, training):
        token_id = "tok_" + uuid.uuid4().hex[:10]
        save_token_file(workdir / "tokens" / token_id, matrix,
                        backend.backend_id, label, training=training)
        return token_id

    def _run_optimization(job, pairs, init, cfg, zero_epochs):
        try:
            if zero_epochs:
                loss = evaluate_loss(pairs, init)
                job.push({"epoch": 0, "loss": loss, "lr": 0.0})
                job.token_id = _store_token(init, job.class_name, {
                    "best_loss": loss, "best_epoch": 0, "epochs": 0})
                job.best_loss = loss
                job.best_epoch = 0
            else:
                result = optimize_tokens(
                    pairs, init, cfg,
                    progress=lambda epoch, loss, lr: job.push(
                        {"epoch": epoch, "loss": loss, "lr": lr}))
                job.token_id = _store_token(result.best_tokens, job.class_name, {
                    "best_loss": result.best_loss,
                    "best_epoch": result.best_epoch,
                    "epochs": cfg.epochs,
                    "learning_rate": cfg.learning_rate,
                    "initial_loss": result.loss_history[0],
                })
                job.best_loss = result.best_loss
                job.best_epoch = result.best_epoch
            job.finish()
        except Exception as exc:
            job.finish(error=str(exc))
        finally:
            for session_id in job.session_ids:
                session = sessions.get(session_id)
                if session is not None:
                    with session.lock:
                        if session.active_job == job.id:
                            session.active_job = None

    @app.post("/optimizations")
    def start_optimization(req: OptimizationRequest):
        if not req.session_ids:
            return error(422, "session_ids must not be empty")
        try:
            selected = [need_session(sid) for sid in req.session_ids]
        except LookupError as exc:
            return error(404, f"unknown session {exc}")
        pairs = []
        for s in selected:
            path = s.directory / "annotation.png"
            if not path.is_file():
                return error(422, f"session {s.id} has no annotation")
            cls = np.asarray(Image.open(path).convert("L")) > 0
            gt = np.stack([(~cls).astype(float), cls.astype(float)])
            pairs.append(TrainingPair(s.trace, gt))

        cfg_in = dict(req.config)
        epochs = int(cfg_in.pop("epochs", OptimizerConfig().epochs))
        zero_epochs = epochs == 0
        cfg = OptimizerConfig(
            learning_rate=float(cfg_in.pop("learning_rate", 100.0)),
            decay_factor=float(cfg_in.pop("decay_factor", 0.7)),
            decay_every=int(cfg_in.pop("decay_every", 120)),
            epochs=1 if zero_epochs else epochs,
            selection=_selection_from(cfg_in.pop("selection", None)),
        )
        if cfg_in:
            return error(422, f"unknown config keys {sorted(cfg_in)}")

        init = init_attribution_tokens(req.class_name, backend)
        job = Job("job_" + uuid.uuid4().hex[:10], [s.id for s in selected],
                  req.class_name)

        # one job per session at a time
        acquired = []
        try:
            for s in selected:
                with s.lock:
                    if s.active_job is not None:
                        raise RuntimeError(s.id)
                    s.active_job = job.id
                    acquired.append(s)
        except RuntimeError as exc:
            for s in acquired:
                with s.lock:
                    s.active_job = None
            return error(409, f"session {exc} already has a running job")

        jobs[job.id] = job
        worker = threading.Thread(
            target=_run_optimization, args=(job, pairs, init, cfg, zero_epochs),
            daemon=True)
        worker.start()
        return {"job_id": job.id}

    @app.get("/optimizations/{job_id}")
    def job_info(job_id: str):
        job = jobs.get(job_id)
        if job is None:
            return error(404, f"unknown job {job_id}")
        return {
            "job_id": job.id,
            "class_name": job.class_name,
            "done": job.done,
            "error": job.error,
            "events": len(job.events),
            "token_id": job.token_id,
            "best_loss": job.best_loss,
            "best_epoch": job.best_epoch,
        }

    @app.get("/optimizations/{job_id}/events")
    def job_events(job_id: str):
        job = jobs.get(job_id)
        if job is None:
            return error(404, f"unknown job {job_id}")

        def stream():
            cursor = 0
            while True:
                with job.condition:
                    while cursor >= len(job.events) and not job.done:
                        job.condition.wait(timeout=5.0)
                    chunk = job.events[cursor:]
                    cursor += len(chunk)
                    done = job.done and cursor >= len(job.events)
                for event in chunk:
                    yield f"data: {json.dumps(event, sort_keys=True)}\n\n"
                if done:
                    payload = {
                        "token_id": job.token_id,
                        "best_loss": job.best_loss,
                        "best_epoch": job.best_epoch,
                        "error": job.error,
                    }
                    yield f"event: complete\ndata: {json.dumps(payload, sort_keys=True)}\n\n"
                    return

        return StreamingResponse(stream(), media_type="text/event-stream")

    @app.get("/tokens")
    def list_tokens():
        out = []
        for token_dir in sorted((workdir / "tokens").iterdir()):
            meta_file = token_dir / "token.json"
            if not meta_file.is_file():
                continue
            meta = json.loads(meta_file.read_text(encoding="utf-8"))
            out.append({
                "id": token_dir.name,
                "label": meta.get("label"),
                "embed_dim": meta.get("embed_dim"),
                "backend_id": meta.get("backend_id"),
                "best_loss": meta.get("best_loss"),
            })
        return out

    @app.get("/tokens/{token_id}")
    def get_token(token_id: str):
        token_dir = workdir / "tokens" / token_id
        if not (token_dir / "token.json").is_file():
            return error(404, f"unknown token {token_id}")
        matrix, meta = load_token_file(token_dir)
        return {"id": token_id, **meta, "rows": matrix.tokens.tolist()}

    @app.post("/tokens")
    def upload_token(req: TokenUpload):
        rows = np.asarray(req.rows, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[1] != backend.embed_dim:
            return error(422, f"rows must be [n, {backend.embed_dim}]")
        labels = tuple(req.token_labels or
                       [f"row{i}" for i in range(rows.shape[0])])
        if len(labels) != rows.shape[0]:
            return error(422, "one label per row required")
        matrix = TokenEmbeddingMatrix(rows, labels)
        token_id = _store_token(matrix, req.label, training={})
        return {"id": token_id}

    @app.delete("/tokens/{token_id}")
    def delete_token(token_id: str):
        token_dir = workdir / "tokens" / token_id
        if not (token_dir / "token.json").is_file():
            return error(404, f"unknown token {token_id}")
        for child in token_dir.iterdir():
            child.unlink()
        token_dir.rmdir()
        return Response(status_code=204)

    @app.get("/files/{path:path}")
    def files(path: str):
        full = (workdir / path).resolve()
        if workdir.resolve() not in full.parents and full != workdir.resolve():
            return error(404, "outside workdir")
        if not full.is_file():
            return error(404, path)
        media = "image/png" if full.suffix == ".png" else "application/octet-stream"
        return FileResponse(full, media_type=media)

    if ui_dir and Path(ui_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app
