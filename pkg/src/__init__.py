"""
EdgeCFL - 无线边缘网络上的聚类联邦多任务学习仿真器
"""

__version__ = "1.2.0"
