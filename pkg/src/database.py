"""
数据库模型和连接管理（运行历史）
"""
import logging
from datetime import datetime
from pathlib import Path
from typing import Optional

from sqlalchemy import Column, DateTime, Float, Integer, String, Text, create_engine, func, select, text
from sqlalchemy.orm import Session, declarative_base, sessionmaker
from sqlalchemy.pool import StaticPool

from src.config import config


logger = logging.getLogger(__name__)

# 创建Base类
Base = declarative_base()


class RunHistory(Base):
    """仿真运行历史表"""
    __tablename__ = "run_history"

    # 主键
    id = Column(String(50), primary_key=True, index=True)

    # 基本信息
    kind = Column(String(20), nullable=False, default="run")  # run, compare
    strategy = Column(String(40), nullable=False, index=True)
    seed = Column(String(24), nullable=False)  # 64 位无符号种子超出 SQLite INTEGER 范围
    output_dir = Column(String(500))

    # 时间信息
    started_at = Column(DateTime, nullable=False, index=True)
    ended_at = Column(DateTime)
    duration_sec = Column(Float)

    # 状态信息
    status = Column(String(20), nullable=False)  # running, completed, failed
    error = Column(Text)

    # 结果
    rounds_completed = Column(Integer)
    first_split_round = Column(Integer)
    rounds_to_all_stopped = Column(Integer)
    accuracy_gap = Column(Float)
    adjusted_rand_index = Column(Float)
    simulated_time = Column(Float)
    config_json = Column(Text)

    # 元数据
    created_at = Column(DateTime, default=datetime.now)
    updated_at = Column(DateTime, default=datetime.now, onupdate=datetime.now)

    def to_dict(self):
        """转换为字典"""
        return {
            "id": self.id,
            "kind": self.kind,
            "strategy": self.strategy,
            "seed": int(self.seed) if self.seed is not None else None,
            "outputDir": self.output_dir,
            "startedAt": self.started_at.isoformat() if self.started_at else None,
            "endedAt": self.ended_at.isoformat() if self.ended_at else None,
            "durationSec": self.duration_sec,
            "status": self.status,
            "error": self.error,
            "roundsCompleted": self.rounds_completed,
            "firstSplitRound": self.first_split_round,
            "roundsToAllStopped": self.rounds_to_all_stopped,
            "accuracyGap": self.accuracy_gap,
            "adjustedRandIndex": self.adjusted_rand_index,
            "simulatedTime": self.simulated_time,
        }


class DatabaseManager:
    """数据库管理器"""

    def __init__(self, database_url: Optional[str] = None, echo: Optional[bool] = None):
        self.database_url = database_url or config.database_url
        self.echo = config.database_echo if echo is None else echo
        self.engine = None
        self.session_maker = None

    def init_db(self):
        """初始化数据库（同步方式）"""
        if self.session_maker is not None:
            return
        logger.info("📊 正在初始化数据库: %s", self.database_url)

        if self.database_url.startswith('sqlite'):
            # 确保数据目录存在
            db_path = self.database_url.replace('sqlite:///', '', 1)
            if db_path and db_path != ':memory:':
                Path(db_path).parent.mkdir(parents=True, exist_ok=True)
            # SQLite 使用特殊配置以支持多线程
            self.engine = create_engine(
                self.database_url,
                connect_args={"check_same_thread": False},
                poolclass=StaticPool,
                echo=self.echo
            )
        else:
            self.engine = create_engine(self.database_url, echo=self.echo)

        # 创建所有表
        Base.metadata.create_all(bind=self.engine)
        self.session_maker = sessionmaker(bind=self.engine)
        logger.debug("📋 数据库表: %s", ', '.join(Base.metadata.tables.keys()))

    def get_session(self) -> Session:
        """获取数据库Session"""
        if not self.session_maker:
            raise RuntimeError("Database not initialized. Call init_db() first.")
        return self.session_maker()

    def check_connection(self) -> bool:
        """检查数据库连接"""
        try:
            with self.get_session() as session:
                session.execute(text("SELECT 1"))
            return True
        except Exception as e:
            logger.error("❌ 数据库连接失败: %s", e)
            return False


# 全局数据库管理器实例
db_manager = DatabaseManager()


# CRUD操作函数
class RunHistoryDB:
    """运行历史数据库操作"""

    @staticmethod
    def create(session: Session, **kwargs) -> RunHistory:
        """创建新记录，未提供 id 时自动生成"""
        if not kwargs.get('id'):
            from src.utils import generate_run_id
            kwargs['id'] = generate_run_id()
        if kwargs.get('seed') is not None:
            kwargs['seed'] = str(kwargs['seed'])

        record = RunHistory(**kwargs)
        session.add(record)
        session.commit()
        session.refresh(record)
        return record

    @staticmethod
    def get_by_id(session: Session, record_id: str) -> Optional[RunHistory]:
        """根据ID获取记录"""
        return session.query(RunHistory).filter(RunHistory.id == record_id).first()

    @staticmethod
    def get_all(
        session: Session,
        limit: int = 20,
        offset: int = 0,
        strategy: Optional[str] = None,
        status: Optional[str] = None,
    ) -> list[RunHistory]:
        """获取所有记录（最近的在前）"""
        query = session.query(RunHistory)

        if strategy:
            query = query.filter(RunHistory.strategy == strategy)
        if status:
            query = query.filter(RunHistory.status == status)

        query = query.order_by(RunHistory.started_at.desc(), RunHistory.id)
        return query.offset(offset).limit(limit).all()

    @staticmethod
    def update(session: Session, record_id: str, **kwargs) -> Optional[RunHistory]:
        """更新记录"""
        record = RunHistoryDB.get_by_id(session, record_id)
        if record:
            for key, value in kwargs.items():
                if hasattr(record, key) and key != 'id':
                    setattr(record, key, value)
            record.updated_at = datetime.now()
            session.commit()
            session.refresh(record)
        return record

    @staticmethod
    def delete(session: Session, record_id: str) -> bool:
        """删除记录"""
        record = RunHistoryDB.get_by_id(session, record_id)
        if record:
            session.delete(record)
            session.commit()
            return True
        return False

    @staticmethod
    def delete_all(session: Session) -> int:
        """删除所有记录，返回删除条数"""
        count = session.query(RunHistory).delete()
        session.commit()
        return count

    @staticmethod
    def get_statistics(session: Session) -> dict:
        """获取统计信息（按策略分组）"""
        total = session.execute(select(func.count(RunHistory.id))).scalar() or 0
        stmt = select(
            RunHistory.strategy,
            func.count(RunHistory.id).label('runs'),
            func.avg(RunHistory.first_split_round).label('mean_first_split'),
            func.avg(RunHistory.accuracy_gap).label('mean_gap'),
            func.avg(RunHistory.adjusted_rand_index).label('mean_ari'),
        ).where(RunHistory.status == "completed").group_by(RunHistory.strategy).order_by(RunHistory.strategy)

        by_strategy = {
            row.strategy: {
                "runs": row.runs,
                "meanFirstSplitRound": row.mean_first_split,
                "meanAccuracyGap": row.mean_gap,
                "meanAdjustedRandIndex": row.mean_ari,
            }
            for row in session.execute(stmt)
        }
        return {"total_runs": total, "by_strategy": by_strategy}
