"""
运行历史相关API - 使用数据库存储
"""
import logging
from typing import Optional

from fastapi import APIRouter, HTTPException, Path, Query

from src.database import RunHistoryDB, db_manager


logger = logging.getLogger(__name__)

router = APIRouter()


@router.get("/history", summary="获取运行历史")
async def get_history(
    limit: int = Query(20, ge=1, le=500, description="返回记录数"),
    offset: int = Query(0, ge=0, description="偏移量"),
    strategy: Optional[str] = Query(None, description="按调度策略过滤"),
    status: Optional[str] = Query(None, description="按状态过滤"),
):
    """
    获取运行历史列表（最近的在前）
    """
    try:
        with db_manager.get_session() as session:
            records = RunHistoryDB.get_all(session, limit=limit, offset=offset, strategy=strategy, status=status)
            return [record.to_dict() for record in records]
    except RuntimeError as e:
        logger.error("❌ 获取运行历史失败: %s", e)
        # 返回空列表而不是错误，保证服务可用
        return []


@router.delete("/history", summary="清空运行历史")
async def clear_history():
    """
    删除全部运行记录（输出目录中的文件保留）
    """
    try:
        with db_manager.get_session() as session:
            deleted = RunHistoryDB.delete_all(session)
            logger.info("🗑️  已清空运行历史: %d 条", deleted)
            return {"success": True, "deleted": deleted}
    except RuntimeError as e:
        logger.error("❌ 清空运行历史失败: %s", e)
        raise HTTPException(status_code=500, detail="Internal server error") from e


@router.get("/history/statistics", summary="获取统计信息")
async def get_statistics():
    """按策略汇总已完成运行的平均首次分裂轮次、准确率差距与 ARI"""
    try:
        with db_manager.get_session() as session:
            return RunHistoryDB.get_statistics(session)
    except RuntimeError as e:
        logger.error("❌ 获取统计信息失败: %s", e)
        return {"total_runs": 0, "by_strategy": {}}


@router.get("/history/{history_id}", summary="获取单条运行记录")
async def get_history_item(history_id: str = Path(..., description="运行ID")):
    try:
        with db_manager.get_session() as session:
            record = RunHistoryDB.get_by_id(session, history_id)
            if not record:
                raise HTTPException(status_code=404, detail="History item not found")
            return record.to_dict()
    except HTTPException:
        raise
    except RuntimeError as e:
        logger.error("❌ 获取运行记录失败: %s", e)
        raise HTTPException(status_code=500, detail="Internal server error") from e


@router.delete("/history/{history_id}", summary="删除运行记录")
async def delete_history_item(history_id: str = Path(..., description="运行ID")):
    """
    删除运行记录（输出目录中的文件保留）
    """
    try:
        with db_manager.get_session() as session:
            if not RunHistoryDB.delete(session, history_id):
                raise HTTPException(status_code=404, detail="History item not found")
            return {"success": True, "message": "History item deleted"}
    except HTTPException:
        raise
    except RuntimeError as e:
        logger.error("❌ 删除运行记录失败: %s", e)
        raise HTTPException(status_code=500, detail="Internal server error") from e
