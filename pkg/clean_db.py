"""
清理运行历史数据库与运行输出

    python clean_db.py           只删除数据库
    python clean_db.py --runs    同时删除 storage.runs_path 下的全部运行输出
"""
import argparse
import shutil
from pathlib import Path

from src.config import config


def main():
    parser = argparse.ArgumentParser(description="清理 EdgeCFL 本地数据")
    parser.add_argument("--runs", action="store_true", help="同时删除运行输出目录")
    args = parser.parse_args()

    db_path = Path(config.get('database.path', './data/edge_cfl.db'))
    if db_path.exists():
        print(f"🗑️  删除数据库文件: {db_path}")
        db_path.unlink()
        print("✅ 数据库已删除")
    else:
        print("ℹ️  数据库文件不存在")

    if args.runs:
        runs_path = Path(config.runs_path)
        if runs_path.exists():
            print(f"🗑️  删除运行输出: {runs_path}")
            shutil.rmtree(runs_path)
        else:
            print("ℹ️  运行输出目录不存在")

    print("\n💡 提示: 重新运行程序时会自动创建新的数据库")


if __name__ == "__main__":
    main()
