"""
差分验证、内存占用模型和开销基准
"""
