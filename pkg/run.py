#!/usr/bin/env python
"""
启动脚本 - 仿真命令行与 HTTP 服务的统一入口

    python run.py run --config config/experiment.example.json
    python run.py compare --config config/experiment.example.json --strategies proposed_two_phase,random --seeds 1,2,3
    python run.py bound --tau 1,5,10
    python run.py serve
"""
import os
import sys

# 确保项目根目录在 Python 路径中
project_root = os.path.dirname(os.path.abspath(__file__))
sys.path.insert(0, project_root)


def main() -> int:
    from src.cli import main as cli_main
    return cli_main()


if __name__ == "__main__":
    sys.exit(main())
