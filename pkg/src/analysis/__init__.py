"""
分析：收敛界验证与运行报表
"""
