"""HTTP front end: GET /classify and GET /healthz."""

from __future__ import annotations

import logging
import threading
from contextlib import asynccontextmanager
from typing import Callable, Optional

from fastapi import FastAPI, Query
from fastapi.responses import JSONResponse

from ..errors import InvalidUrl
from .classifier import Classifier
from .schemas import ClassificationResponse, ErrorResponse, HealthResponse

log = logging.getLogger(__name__)


def create_app(load: Callable[[], Classifier] | Classifier) -> FastAPI:
    """Build the app around a classifier or a loader for one.

    A loader runs on a background thread at startup; until it finishes and
    the warm-up pass completes, every endpoint answers 503.
    """
    state: dict = {"classifier": None, "error": None}
    ready = threading.Event()

    def warm() -> None:
        try:
            clf = load if isinstance(load, Classifier) else load()
            clf.warm_up()
            state["classifier"] = clf
        except Exception as exc:  # surfaced through /healthz
            log.exception("warm-up failed")
            state["error"] = repr(exc)
        finally:
            ready.set()

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        threading.Thread(target=warm, name="webcat-warmup", daemon=True).start()
        yield

    app = FastAPI(title="webcat", lifespan=lifespan)
    app.state.ready = ready
    app.state.webcat = state

    def unavailable() -> JSONResponse:
        detail = state["error"] or "warming up"
        return JSONResponse(ErrorResponse(error="Unavailable", detail=detail).model_dump(), status_code=503)

    def bad_request(detail: str) -> JSONResponse:
        return JSONResponse(ErrorResponse(error="BadRequest", detail=detail).model_dump(), status_code=400)

    @app.get("/healthz", response_model=HealthResponse, responses={503: {"model": ErrorResponse}})
    def healthz():
        clf: Optional[Classifier] = state["classifier"]
        if clf is None:
            return unavailable()
        return HealthResponse(model_id=clf.model_id, signatures=len(clf.signatures))

    @app.get(
        "/classify",
        response_model=ClassificationResponse,
        responses={400: {"model": ErrorResponse}, 503: {"model": ErrorResponse}},
    )
    def classify(url: Optional[str] = Query(default=None)):
        clf: Optional[Classifier] = state["classifier"]
        if clf is None:
            return unavailable()
        if not url:
            return bad_request("missing or empty url parameter")
        try:
            return clf.classify(url)
        except InvalidUrl as exc:
            return bad_request(str(exc))
        except LookupError as exc:  # signature miss without a model
            return JSONResponse(ErrorResponse(error="NoModel", detail=str(exc)).model_dump(), status_code=503)

    return app
