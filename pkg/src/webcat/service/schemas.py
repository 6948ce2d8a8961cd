from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, model_validator

from ..categories import Category

CategoryText = Literal[tuple(c.text for c in Category)]


class ClassificationResponse(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    url: str
    category: CategoryText
    source: Literal["Signature", "Model"]
    latency_us: int
    model_id: Optional[str] = None
    match_kind: Optional[Literal["Prefix", "Domain"]] = None

    @model_validator(mode="after")
    def _one_path(self):
        if (self.source == "Signature") != (self.match_kind is not None):
            raise ValueError("match_kind is set exactly when source is Signature")
        if (self.source == "Model") != (self.model_id is not None):
            raise ValueError("model_id is set exactly when source is Model")
        return self

    def decision(self) -> dict:
        """The response without its timing, for comparing outcomes."""
        return self.model_dump(exclude={"latency_us"})


class HealthResponse(BaseModel):
    status: Literal["ok"] = "ok"
    model_id: Optional[str] = None
    signatures: int = 0


class ErrorResponse(BaseModel):
    error: str
    detail: str
