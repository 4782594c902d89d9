"""
EdgeCFL Simulation Service
仿真服务主程序：提交运行、查询结果、回放事件日志、运行历史
"""
import logging
from contextlib import asynccontextmanager
from datetime import datetime

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from src import __version__
from src.api import history, runs
from src.config import config
from src.database import db_manager
from src.errors import CFLError, ConfigError


logger = logging.getLogger(__name__)


@asynccontextmanager
async def lifespan(app: FastAPI):
    logger.info("📡 EdgeCFL Simulation Service Starting... (%s:%s)", config.server_host, config.server_port)
    try:
        db_manager.init_db()
    except Exception as e:
        logger.warning("⚠️  数据库初始化失败: %s", e)
    logger.info("✅ Service ready!")
    yield
    logger.info("👋 EdgeCFL Simulation Service Shutting down...")


app = FastAPI(
    title="EdgeCFL Simulation API",
    version=__version__,
    description="无线边缘聚类联邦学习仿真服务 - 提交仿真、查询结果、SSE 回放逐轮日志",
    lifespan=lifespan,
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=config.cors_origins,
    allow_credentials=config.cors_credentials,
    allow_methods=["*"],
    allow_headers=["*"],
)


@app.exception_handler(ConfigError)
async def config_exception_handler(request: Request, exc: ConfigError):
    return JSONResponse(
        status_code=422,
        content={"error": "Invalid Config", "diagnostics": exc.diagnostics, "path": request.url.path},
    )


@app.exception_handler(CFLError)
async def simulation_exception_handler(request: Request, exc: CFLError):
    return JSONResponse(
        status_code=400,
        content={"error": type(exc).__name__, "message": str(exc), "path": request.url.path},
    )


# 全局异常处理
@app.exception_handler(Exception)
async def global_exception_handler(request: Request, exc: Exception):
    logger.exception("❌ 未处理的异常: %s", exc)
    return JSONResponse(
        status_code=500,
        content={"error": "Internal Server Error", "message": str(exc), "path": request.url.path},
    )


@app.get("/", tags=["System"])
async def root():
    """健康检查接口"""
    return {"service": "EdgeCFL Simulation API", "version": __version__, "status": "running"}


@app.get("/health", tags=["System"])
async def health_check():
    """详细健康检查"""
    database_ok = db_manager.session_maker is not None and db_manager.check_connection()
    return {
        "status": "healthy",
        "timestamp": datetime.now().isoformat(),
        "config": {
            "port": config.server_port,
            "log_level": config.log_level,
            "runs_path": config.runs_path,
        },
        "services": {
            "simulation": "operational",
            "database": "operational" if database_ok else "unavailable",
        },
    }


app.include_router(runs.router, tags=["Runs"])
app.include_router(history.router, tags=["History"])
