from __future__ import annotations

from typing import Any, Type, TypeVar

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from backend.app.error_handlers import GcdError

ModelT = TypeVar("ModelT", bound=BaseModel)


class LossConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid", populate_by_name=True)

    tau: float = Field(default=0.07, gt=0)
    lambda_: float = Field(default=0.25, ge=0, le=1, alias="lambda")
    labeled_batch_size: int = Field(default=64, ge=2)
    unlabeled_batch_size: int = Field(default=64, ge=1)
    view_noise: float = Field(default=0.05, ge=0)


class SSKMeansConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    k_total: int = Field(ge=1)
    max_iters: int = Field(default=200, ge=1)
    tolerance: float = Field(default=1e-6, gt=0)
    seed: int = 0
    keep_history: bool = False


class SynthConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    num_classes: int = Field(ge=1)
    dims_image: int = Field(ge=1)
    dims_text: int = Field(ge=1)
    items_per_class: int = Field(ge=1)
    captions_per_class: int = Field(default=20, ge=1)
    sigma_image: float = Field(default=0.3, ge=0)
    sigma_text: float = Field(default=0.1, ge=0)
    alpha: float = Field(default=0.9, ge=0, le=1)
    seed: int = 0


def build_model(model: Type[ModelT], **values: Any) -> ModelT:
    """Construct a parameter model, mapping validation failures to CONFIG_ERROR."""
    try:
        return model(**values)
    except ValidationError as exc:
        details = "; ".join(
            f"{'.'.join(str(part) for part in error['loc']) or model.__name__}: {error['msg']}" for error in exc.errors()
        )
        raise GcdError(code="CONFIG_ERROR", message=f"invalid {model.__name__}: {details}") from exc
