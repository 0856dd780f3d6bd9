"""SDTS 压缩视频质量增强"""
__version__ = "1.0.0"
