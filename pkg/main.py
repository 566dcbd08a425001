"""
主程序入口
RISC-V 系统调用拦截补丁工具的命令行

使用示例:
    python main.py analyze --input libc.so
    python main.py patch --kind corpus-spec --input corpus.yaml --out out/
    python main.py verify --out out/
    python main.py bench --patch-kind small --iterations 1000
    python main.py footprint --format text
"""
import sys

from src.cli import main


if __name__ == "__main__":
    sys.exit(main())
