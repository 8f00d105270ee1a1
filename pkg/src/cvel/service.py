"""In-memory HTTP session service around the solver.

Sessions hold an image, landmarks, parameters and an init spec; a run
executes in a worker thread and publishes a snapshot (trace rows plus the
current level set) after every outer iteration, so polling clients see
progress. Idle sessions are evicted after a configurable TTL. Completed
runs serve the same trace CSV bytes the CLI writes.
"""

import io
import json
import threading
import time
import uuid
from dataclasses import asdict

import numpy as np
from fastapi import FastAPI, HTTPException, Request, Response

from . import pipeline
from .model import LandmarkSet, ModelParams, PRESETS
from .solver import ConvergenceReport, run_admm

_PARAM_FIELDS = {f for f in ModelParams.__dataclass_fields__}


class Session:
    def __init__(self, sid, ttl):
        self.id = sid
        self.ttl = ttl
        self.lock = threading.Lock()
        self.cancel = threading.Event()
        self.thread = None
        self.image = None
        self.landmarks = LandmarkSet()
        self.params = ModelParams()
        self.init_spec = None
        self.status = "idle"
        self.message = None
        self.report = ConvergenceReport()
        self.phi = None
        self.converged = None
        self.touched = time.monotonic()

    def touch(self):
        self.touched = time.monotonic()

    @property
    def running(self):
        return self.status == "running"

    def default_init(self):
        m, n = self.image.shape
        return f"circle:{m / 2},{n / 2},{min(m, n) / 4}"


def create_app(ttl_seconds=3600.0, ui_dir=None) -> FastAPI:
    app = FastAPI(title="cvel session service")
    sessions = {}
    registry_lock = threading.Lock()

    def _evict():
        now = time.monotonic()
        with registry_lock:
            stale = [sid for sid, s in sessions.items()
                     if not s.running and now - s.touched > s.ttl]
            for sid in stale:
                del sessions[sid]

    def _get(sid) -> Session:
        _evict()
        with registry_lock:
            s = sessions.get(sid)
        if s is None:
            raise HTTPException(404, f"no session {sid}")
        s.touch()
        return s

    @app.post("/sessions", status_code=201)
    def create_session():
        _evict()
        sid = uuid.uuid4().hex[:12]
        with registry_lock:
            sessions[sid] = Session(sid, ttl_seconds)
        return {"id": sid}

    @app.put("/sessions/{sid}/image")
    async def put_image(sid: str, request: Request):
        s = _get(sid)
        data = await request.body()
        try:
            image = pipeline.decode_image(data)
        except ValueError as exc:
            raise HTTPException(400, str(exc))
        with s.lock:
            if s.running:
                raise HTTPException(409, "session is running")
            s.image = image
            s.status = "idle"
            s.report = ConvergenceReport()
            s.phi = None
        m, n = image.shape
        return {"width": n, "height": m}

    @app.put("/sessions/{sid}/landmarks")
    async def put_landmarks(sid: str, request: Request):
        # body is the landmark JSON array itself, same layout as the files
        s = _get(sid)
        try:
            points = json.loads(await request.body())
        except json.JSONDecodeError:
            raise HTTPException(400, "landmarks must be a JSON array")
        if not isinstance(points, list):
            raise HTTPException(400, "landmarks must be a JSON array")
        with s.lock:
            if s.running:
                raise HTTPException(409, "session is running")
            if s.image is None:
                raise HTTPException(409, "upload an image before landmarks")
            m, n = s.image.shape
            parsed = []
            for entry in points:
                try:
                    r, c = int(entry["row"]), int(entry["col"])
                except (TypeError, KeyError, ValueError):
                    raise HTTPException(400, f"bad landmark entry {entry!r}")
                if not (0 <= r < m and 0 <= c < n):
                    raise HTTPException(400, f"landmark ({r}, {c}) outside {m}x{n} image")
                parsed.append((r, c))
            s.landmarks = LandmarkSet(points=parsed)
        return {"count": len(parsed)}

    @app.put("/sessions/{sid}/params")
    def put_params(sid: str, body: dict):
        s = _get(sid)
        with s.lock:
            if s.running:
                raise HTTPException(409, "session is running")
            kwargs = {}
            preset = body.pop("preset", None)
            if preset is not None:
                if preset not in PRESETS:
                    raise HTTPException(400, f"unknown preset {preset!r}")
                kwargs.update(PRESETS[preset])
            init_spec = body.pop("init", None)
            mode = body.pop("mode", None)
            for key, value in body.items():
                if key not in _PARAM_FIELDS:
                    raise HTTPException(400, f"unknown parameter {key!r}")
                kwargs[key] = value
            if mode is not None:
                if mode not in ("cv", "cvl", "cve", "cvel"):
                    raise HTTPException(400, f"unknown mode {mode!r}")
                if "mu" in body or "b" in body:
                    raise HTTPException(400, "mode fixes mu and b; send one or the other")
                if mode in ("cv", "cve"):
                    kwargs["mu"] = 0.0
                if mode in ("cv", "cvl"):
                    kwargs["b"] = 0.0
            merged = {**asdict(s.params), **kwargs}
            try:
                s.params = ModelParams(**merged)
            except (TypeError, ValueError) as exc:
                raise HTTPException(400, str(exc))
            if init_spec is not None:
                if s.image is not None:
                    try:
                        pipeline.init_phi(init_spec, s.image.shape)
                    except ValueError as exc:
                        raise HTTPException(400, str(exc))
                s.init_spec = str(init_spec)
            return {"params": asdict(s.params), "mode": s.params.mode,
                    "init": s.init_spec}

    @app.post("/sessions/{sid}/run")
    def run(sid: str):
        s = _get(sid)
        with s.lock:
            if s.running:
                raise HTTPException(409, "session is already running")
            if s.image is None:
                raise HTTPException(409, "session has no image")
            image = s.image.copy()
            landmarks = LandmarkSet(points=list(s.landmarks.points),
                                    dilation_radius=s.landmarks.dilation_radius)
            params = s.params
            init_spec = s.init_spec or s.default_init()
            try:
                phi0 = pipeline.init_phi(init_spec, image.shape)
            except ValueError as exc:
                raise HTTPException(400, str(exc))
            s.status = "running"
            s.message = None
            s.converged = None
            s.cancel.clear()
            s.report = ConvergenceReport()
            s.phi = phi0.copy()

        def on_iteration(state, metrics, energy):
            with s.lock:
                if s.cancel.is_set():
                    return False
                t1, t2, t3, t4, phi_change, sigma = metrics
                s.report.t1.append(t1)
                s.report.t2.append(t2)
                s.report.t3.append(t3)
                s.report.t4.append(t4)
                s.report.phi_change.append(phi_change)
                s.report.sigma.append(sigma)
                s.report.energy.append(energy)
                s.report.iterations += 1
                s.phi = state.phi.copy()
                s.touch()
            return True

        def work():
            try:
                state, rep = run_admm(image, landmarks, phi0, params,
                                      on_iteration=on_iteration)
                with s.lock:
                    s.phi = state.phi.copy()
                    s.report.converged = rep.converged
                    s.converged = rep.converged
                    if s.cancel.is_set():
                        s.status = "failed"
                        s.message = "cancelled"
                    else:
                        s.status = "done"
                    s.touch()
            except Exception as exc:  # surfaced through session status
                with s.lock:
                    s.status = "failed"
                    s.message = str(exc)
                    s.touch()

        s.thread = threading.Thread(target=work, daemon=True)
        s.thread.start()
        return {"status": "running"}

    @app.post("/sessions/{sid}/cancel")
    def cancel(sid: str):
        s = _get(sid)
        with s.lock:
            if not s.running:
                raise HTTPException(409, "session is not running")
            s.cancel.set()
        return {"status": "cancelling"}

    @app.get("/sessions/{sid}")
    def get_session(sid: str):
        s = _get(sid)
        with s.lock:
            dims = list(s.image.shape) if s.image is not None else None
            return {
                "id": s.id,
                "status": s.status,
                "message": s.message,
                "dims": dims,
                "params": asdict(s.params),
                "mode": s.params.mode,
                "init": s.init_spec,
                "landmarks": [{"row": r, "col": c} for r, c in s.landmarks.points],
                "dilation_radius": s.landmarks.dilation_radius,
                "iterations": s.report.iterations,
                "converged": s.converged,
                "final_energy": s.report.energy[-1] if s.report.energy else None,
            }

    @app.get("/sessions/{sid}/contour")
    def get_contour(sid: str):
        s = _get(sid)
        with s.lock:
            if s.phi is None:
                raise HTTPException(404, "session has no result yet")
            phi = s.phi.copy()
        return pipeline.contour_to_json(pipeline.extract_contour(phi))

    @app.get("/sessions/{sid}/trace")
    def get_trace(sid: str, request: Request):
        s = _get(sid)
        with s.lock:
            if s.report.iterations == 0 and s.status == "idle":
                raise HTTPException(404, "session has no trace yet")
            rep = s.report
            if "application/json" in request.headers.get("accept", ""):
                return {
                    "iter": list(range(1, rep.iterations + 1)),
                    "T1": list(rep.t1), "T2": list(rep.t2),
                    "T3": list(rep.t3), "T4": list(rep.t4),
                    "Phi": list(rep.phi_change), "Sigma": list(rep.sigma),
                    "energy": list(rep.energy),
                }
            csv_text = pipeline.trace_csv(rep)
        return Response(content=csv_text, media_type="text/csv")

    @app.get("/sessions/{sid}/overlay.png")
    def get_overlay(sid: str):
        s = _get(sid)
        with s.lock:
            if s.phi is None or s.image is None:
                raise HTTPException(404, "session has no result yet")
            phi = s.phi.copy()
            image = s.image.copy()
            landmarks = LandmarkSet(points=list(s.landmarks.points),
                                    dilation_radius=s.landmarks.dilation_radius)
        img = pipeline.overlay_image(image, pipeline.extract_contour(phi), landmarks)
        buf = io.BytesIO()
        img.save(buf, format="PNG")
        return Response(content=buf.getvalue(), media_type="image/png")

    @app.get("/presets")
    def get_presets():
        return {"presets": PRESETS, "defaults": asdict(ModelParams()),
                "modes": ["cv", "cvl", "cve", "cvel"]}

    if ui_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app
