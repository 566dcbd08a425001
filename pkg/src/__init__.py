"""
rvpatch
RISC-V 系统调用拦截补丁工具：静态分析、补丁规划、代码生成与模拟器上的差分验证
"""

__version__ = "1.0.0"
