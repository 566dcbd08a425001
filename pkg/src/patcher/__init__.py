"""
补丁流水线
isa（解码/编码）→ image（代码镜像）→ analysis（ecall 与窗口）→ planner（补丁类型）→ codegen（字节生成）
"""
