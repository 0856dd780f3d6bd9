"""
pytest 配置: 测试时日志只输出到控制台
"""
import os

os.environ.setdefault("SDTS_LOG_DIR", "")
os.environ.setdefault("SDTS_LOG_LEVEL", "WARNING")
