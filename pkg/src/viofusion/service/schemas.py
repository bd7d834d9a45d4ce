"""Request and response models for the HTTP service.

Configs travel as the nested section -> key -> value mapping produced by
Config.to_mapping, so a request body carries the full resolved config and
the server never consults local INI files. JSON object keys are strings,
which is why per-length drift tables come back keyed by stringified
segment lengths; clients that want integers convert on their side.
"""

from __future__ import annotations

from typing import Dict, List, Optional, Union

from pydantic import BaseModel, Field

ConfigMapping = Dict[str, Dict[str, Union[bool, int, float, str]]]


class HealthResponse(BaseModel):
    status: str
    version: str


class SynthRequest(BaseModel):
    config: ConfigMapping
    out_dir: str


class SynthResponse(BaseModel):
    out_dir: str
    sequences: int
    frames_per_sequence: int


class TrainRequest(BaseModel):
    config: ConfigMapping
    data_dir: str
    out_dir: str
    resume: Optional[str] = None


class TrainResponse(BaseModel):
    steps: int
    # None when the run performed no steps (steps=0, or resume at the end)
    initial_loss: Optional[float] = None
    final_loss: Optional[float] = None
    checkpoint: str
    log: str


class EvalRequest(BaseModel):
    config: ConfigMapping
    ckpt: str
    data_dir: str
    report: str


class EvalResponse(BaseModel):
    t_rel_percent: Dict[str, float]
    r_rel_deg_per_100m: Dict[str, float]
    t_rel_avg: float
    r_rel_avg: float
    hpe_m: float
    frame_count: int
    report_path: str
    csv_path: str


class InferRequest(BaseModel):
    # config may be omitted; the checkpoint header then supplies it
    config: Optional[ConfigMapping] = None
    ckpt: str
    data_dir: str
    poses_out: str


class InferResponse(BaseModel):
    poses_out: str
    frames: int


class ConfigOnlyRequest(BaseModel):
    config: ConfigMapping


class GradcheckRow(BaseModel):
    block: str
    max_rel_err: float
    tolerance: float
    passed: bool


class GradcheckResponse(BaseModel):
    rows: List[GradcheckRow]
    passed: bool


class ParamsResponse(BaseModel):
    blocks: Dict[str, int]
    macs: Dict[str, int]
    fusion_comparison: Dict[str, int]
    config: ConfigMapping


class ErrorBody(BaseModel):
    code: str
    message: str


class ErrorResponse(BaseModel):
    error: ErrorBody = Field(description="machine-readable failure cause")
