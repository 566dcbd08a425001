"""
异常层次模块
所有模块抛出的异常都继承自 RvPatchError，CLI 根据异常类型映射退出码
"""
from typing import Optional


class RvPatchError(Exception):
    """工具链的根异常"""


class ConfigError(RvPatchError):
    """配置文件格式错误"""


# ---- ISA ----

class IsaError(RvPatchError):
    """指令解码/编码错误"""


class TruncatedCodeError(IsaError):
    """可用字节数少于指令宽度"""


class EncodingError(IsaError):
    """字段超出编码范围"""


class JumpRangeError(EncodingError):
    """跳转偏移超出 jal 或 auipc+jalr 的可达范围"""


# ---- 镜像 ----

class ImageError(RvPatchError):
    """代码镜像加载或写出错误"""


class NotElfError(ImageError):
    pass


class WrongElfClassError(ImageError):
    pass


class NoExecutableSectionError(ImageError):
    pass


class ImageAlignmentError(ImageError):
    pass


class EmptyImageError(ImageError):
    pass


class OverlappingPatchError(ImageError):
    """补丁区域互相重叠（内部一致性错误）"""


# ---- 代码生成 ----

class CodegenError(RvPatchError):
    """代码生成内部错误，通常意味着规划阶段的 bug"""


class PlacementError(CodegenError):
    """运行时代码块放置位置超出可达范围"""


# ---- 模拟器 ----

class EmulationError(RvPatchError):
    """模拟执行错误，携带出错时的 pc"""

    def __init__(self, message: str, pc: Optional[int] = None):
        self.pc = pc
        if pc is not None:
            message = f"{message} (pc=0x{pc:x})"
        super().__init__(message)


class IllegalInstructionError(EmulationError):
    pass


class MisalignedAccessError(EmulationError):
    pass


class UnmappedFetchError(EmulationError):
    pass


class UnmappedAccessError(EmulationError):
    pass


class InstructionLimitError(EmulationError):
    pass


class DispatchFailureError(EmulationError):
    """入口点收到未知的识别键，说明代码生成有 bug"""


class UnexpectedBreakError(EmulationError):
    """ebreak 不在任何已知的门地址上"""


# ---- 语料 ----

class InfeasibleSpecError(RvPatchError):
    """语料规格无法构造"""
