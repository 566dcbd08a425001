"""
合成语料生成
"""
