"""
异常定义
"""
from typing import List, Optional


class CFLError(Exception):
    """仿真器所有异常的基类"""


class InvalidArgumentError(CFLError, ValueError):
    """参数不满足前置条件"""


class UnreachableClientError(CFLError):
    """客户端速率为0，无法上传（调用方需要提前排除）"""

    def __init__(self, message: str, client_id: Optional[int] = None):
        super().__init__(message)
        self.client_id = client_id


class DegenerateUpdateError(CFLError):
    """零向量更新，余弦相似度 / gamma 无定义"""


class SizeLimitError(CFLError):
    """穷举二分超过规模上限"""


class ConfigError(CFLError):
    """
    实验配置校验失败

    diagnostics: 每条形如 "line 12: data.num_clients: ..." 的诊断信息
    """

    def __init__(self, diagnostics: List[str]):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(self.diagnostics) or "invalid config")
