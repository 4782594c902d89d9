"""
配置管理模块
"""
import logging
import sys
from pathlib import Path
from typing import Any, Dict, Optional

import yaml
from pydantic_settings import BaseSettings, SettingsConfigDict


logger = logging.getLogger(__name__)


class RuntimeSettings(BaseSettings):
    """环境变量覆盖（CFL_ 前缀）"""

    model_config = SettingsConfigDict(env_prefix="CFL_", extra="ignore")

    config_path: str = "config/config.yaml"
    log_level: Optional[str] = None
    database_url: Optional[str] = None


class Config:
    """服务配置类"""

    def __init__(self, config_path: Optional[str] = None):
        self.settings = RuntimeSettings()
        self.config_path = Path(config_path or self.settings.config_path)
        self._config: Dict[str, Any] = {}
        self.load()

    def load(self):
        """加载配置文件"""
        if not self.config_path.exists():
            logger.debug("⚠️  配置文件不存在: %s，使用默认配置", self.config_path)
            self._load_default_config()
            return

        try:
            with open(self.config_path, 'r', encoding='utf-8') as f:
                self._config = yaml.safe_load(f) or {}
        except (yaml.YAMLError, IOError) as e:
            logger.warning("❌ 加载配置文件失败: %s，使用默认配置", e)
            self._load_default_config()

    def _load_default_config(self):
        """加载默认配置"""
        self._config = {
            'server': {
                'host': '0.0.0.0',
                'port': 8000,
                'reload': False,
                'workers': 1,
                'cors_origins': ['*'],
                'cors_credentials': False
            },
            'database': {
                'type': 'sqlite',
                'path': './data/edge_cfl.db',
                'echo': False
            },
            'storage': {
                'runs_path': './data/runs'
            },
            'logging': {
                'level': 'INFO',
                'format': '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
            }
        }

    def get(self, key: str, default: Any = None) -> Any:
        """获取配置值，支持点号分隔的路径"""
        keys = key.split('.')
        value = self._config

        for k in keys:
            if isinstance(value, dict):
                value = value.get(k)
                if value is None:
                    return default
            else:
                return default

        return value

    @property
    def server_host(self) -> str:
        return self.get('server.host', '0.0.0.0')

    @property
    def server_port(self) -> int:
        return self.get('server.port', 8000)

    @property
    def server_reload(self) -> bool:
        return self.get('server.reload', False)

    @property
    def cors_origins(self) -> list:
        return self.get('server.cors_origins', ['*'])

    @property
    def cors_credentials(self) -> bool:
        return self.get('server.cors_credentials', False)

    @property
    def database_url(self) -> str:
        if self.settings.database_url:
            return self.settings.database_url
        if self.get('database.type', 'sqlite') == 'sqlite':
            return f"sqlite:///{self.get('database.path', './data/edge_cfl.db')}"
        return self.get('database.url', 'sqlite:///./data/edge_cfl.db')

    @property
    def database_echo(self) -> bool:
        return self.get('database.echo', False)

    @property
    def runs_path(self) -> str:
        return self.get('storage.runs_path', './data/runs')

    @property
    def log_level(self) -> str:
        return (self.settings.log_level or self.get('logging.level', 'INFO')).upper()

    @property
    def log_format(self) -> str:
        return self.get('logging.format', '%(asctime)s - %(name)s - %(levelname)s - %(message)s')

    @property
    def log_file(self) -> Optional[str]:
        return self.get('logging.file')


def setup_logging(cfg: Optional[Config] = None, level: Optional[str] = None) -> None:
    """按配置初始化根日志器（重复调用会覆盖之前的处理器）"""
    cfg = cfg or config
    handlers: list = [logging.StreamHandler(sys.stderr)]
    if cfg.log_file:
        Path(cfg.log_file).parent.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(cfg.log_file, encoding='utf-8'))
    logging.basicConfig(
        level=(level or cfg.log_level).upper(),
        format=cfg.log_format,
        handlers=handlers,
        force=True,
    )


# 全局配置实例
config = Config()
