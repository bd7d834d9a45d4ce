"""FastAPI application wrapping the odometry pipeline.

Every job endpoint is synchronous: the response arrives when the work is
done, which fits jobs sized for a single desk machine. Domain failures
surface as HTTP 400 with a machine-readable error code instead of a 500.
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__, gradcheck, training
from ..config import Config
from ..errors import VioError
from ..evaluation import emit_report
from ..model import param_report
from . import schemas


def _config_from(payload) -> Config:
    return Config.from_mapping(payload)


def create_app() -> FastAPI:
    app = FastAPI(title="viofusion", version=__version__)

    @app.exception_handler(VioError)
    async def _vio_error(request: Request, exc: VioError):
        return JSONResponse(
            status_code=400,
            content={"error": {"code": exc.code, "message": str(exc)}},
        )

    @app.exception_handler(FileNotFoundError)
    async def _not_found(request: Request, exc: FileNotFoundError):
        return JSONResponse(
            status_code=400,
            content={"error": {"code": "not_found", "message": str(exc)}},
        )

    @app.get("/health", response_model=schemas.HealthResponse)
    async def health():
        return schemas.HealthResponse(status="ok", version=__version__)

    @app.post("/synth", response_model=schemas.SynthResponse)
    async def synth(req: schemas.SynthRequest):
        result = training.synthesize(_config_from(req.config), req.out_dir)
        return schemas.SynthResponse(**result)

    @app.post("/train", response_model=schemas.TrainResponse)
    async def train(req: schemas.TrainRequest):
        result = training.train(
            _config_from(req.config), req.data_dir, req.out_dir, resume=req.resume
        )
        return schemas.TrainResponse(**result)

    @app.post("/eval", response_model=schemas.EvalResponse)
    async def eval_(req: schemas.EvalRequest):
        config = _config_from(req.config)
        report = training.evaluate(config, req.ckpt, req.data_dir)
        csv_path = emit_report(report, req.report)
        return schemas.EvalResponse(
            t_rel_percent={str(k): v for k, v in report.t_rel_percent.items()},
            r_rel_deg_per_100m={str(k): v for k, v in report.r_rel_deg_per_100m.items()},
            t_rel_avg=report.t_rel_avg,
            r_rel_avg=report.r_rel_avg,
            hpe_m=report.hpe_m,
            frame_count=report.frame_count,
            report_path=str(req.report),
            csv_path=str(csv_path),
        )

    @app.post("/infer", response_model=schemas.InferResponse)
    async def infer(req: schemas.InferRequest):
        if req.config is None:
            config = training.checkpoint_config(req.ckpt)
        else:
            config = _config_from(req.config)
        result = training.infer(config, req.ckpt, req.data_dir, req.poses_out)
        return schemas.InferResponse(**result)

    @app.post("/gradcheck", response_model=schemas.GradcheckResponse)
    async def gradcheck_(req: schemas.ConfigOnlyRequest):
        result = gradcheck.run_gradcheck(_config_from(req.config))
        return schemas.GradcheckResponse(**result)

    @app.post("/params", response_model=schemas.ParamsResponse)
    async def params(req: schemas.ConfigOnlyRequest):
        return schemas.ParamsResponse(**param_report(_config_from(req.config)))

    return app
