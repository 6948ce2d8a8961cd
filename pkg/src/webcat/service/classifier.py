"""Signature pre-filter with a student-model fallback."""

from __future__ import annotations

import threading
import time

from ..corpus import normalize_url
from ..models import StudentModel, predict
from ..signatures import SignatureDb, lookup
from .schemas import ClassificationResponse


class Classifier:
    """Classify one URL at a time.

    Exactly one path runs per call: a signature hit answers directly and the
    model is never touched. Both the signature db and the model parameters
    are read-only, so ``classify`` is safe to call from many threads.
    """

    def __init__(self, signatures: SignatureDb, model: StudentModel | None):
        self.signatures = signatures
        self.model = model
        self.model_id = model.model_id if model is not None else None
        self._lock = threading.Lock()
        self.model_invocations = 0
        self.signature_hits = 0

    def classify(self, url: str) -> ClassificationResponse:
        started = time.perf_counter_ns()
        norm = normalize_url(url)
        hit = lookup(self.signatures, norm)
        if hit is not None:
            with self._lock:
                self.signature_hits += 1
            cat, kind = hit
            return ClassificationResponse(
                url=norm, category=cat.text, source="Signature", match_kind=kind.value,
                latency_us=(time.perf_counter_ns() - started) // 1000,
            )
        if self.model is None:
            raise LookupError(f"no signature for {norm!r} and no model loaded")
        with self._lock:
            self.model_invocations += 1
        cat, _ = predict(self.model, [norm])[0]
        return ClassificationResponse(
            url=norm, category=cat.text, source="Model", model_id=self.model_id,
            latency_us=(time.perf_counter_ns() - started) // 1000,
        )

    def warm_up(self) -> None:
        """Run one forward pass so first requests do not pay lazy-init costs."""
        if self.model is not None:
            predict(self.model, ["warm-up.invalid/index"])
