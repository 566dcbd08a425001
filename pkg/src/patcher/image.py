"""
代码镜像模块
加载 ELF64 可执行段或带基地址的原始指令块，并把补丁字节写回镜像
"""
import io
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Optional, Protocol

from elftools.common.exceptions import ELFError
from elftools.elf.constants import SH_FLAGS
from elftools.elf.elffile import ELFFile

from src.core.errors import (
    EmptyImageError,
    ImageAlignmentError,
    ImageError,
    NoExecutableSectionError,
    NotElfError,
    OverlappingPatchError,
    WrongElfClassError,
)
from src.core.logger import Logger


ELF_MAGIC = b"\x7fELF"
_ELFCLASS64 = 2
_ELFDATA2LSB = 1


class ImageOrigin(Enum):
    ELF_TEXT = "ELF_TEXT"
    RAW = "RAW"


@dataclass(frozen=True)
class CodeImage:
    """待补丁的代码：基地址 + 字节"""
    base: int
    data: bytes
    origin: ImageOrigin = ImageOrigin.RAW
    section_name: Optional[str] = None

    def __post_init__(self):
        _check_layout(self.base, self.data)

    @property
    def end(self) -> int:
        return self.base + len(self.data)

    def __len__(self) -> int:
        return len(self.data)

    def contains(self, address: int, length: int = 1) -> bool:
        return self.base <= address and address + length <= self.end

    def offset_of(self, address: int) -> int:
        if not self.contains(address):
            raise ImageError(f"地址 0x{address:x} 不在镜像 [0x{self.base:x}, 0x{self.end:x}) 内")
        return address - self.base

    def read(self, address: int, length: int) -> bytes:
        offset = self.offset_of(address)
        return self.data[offset:offset + length]

    def describe(self) -> dict:
        return {
            "base": self.base,
            "length": len(self.data),
            "origin": self.origin.value,
            "section": self.section_name,
        }


class HasPatchBytes(Protocol):
    patch_bytes: Mapping[int, bytes]


def _check_layout(base: int, data: bytes) -> None:
    if len(data) == 0:
        raise EmptyImageError("代码镜像为空")
    if base % 2:
        raise ImageAlignmentError(f"基地址 0x{base:x} 不是 2 字节对齐")
    if len(data) % 2:
        raise ImageAlignmentError(f"代码长度 {len(data)} 为奇数（末尾多出 1 字节）")


def load_raw(data: bytes, base: int) -> CodeImage:
    """
    包装原始指令块

    参数:
        data: 指令字节
        base: 第一个字节的虚拟地址

    返回:
        CodeImage(origin=RAW)

    异常:
        EmptyImageError: 字节为空
        ImageAlignmentError: 基地址或长度不是 2 字节对齐
    """
    return CodeImage(base=base, data=bytes(data), origin=ImageOrigin.RAW)


def load_elf_text(file_bytes: bytes) -> CodeImage:
    """
    从 ELF64 小端文件中取出可执行段

    优先取 .text，找不到时取第一个带 SHF_EXECINSTR 标志的段

    参数:
        file_bytes: 完整文件内容

    返回:
        CodeImage(origin=ELF_TEXT)

    异常:
        NotElfError: 不是 ELF 文件
        WrongElfClassError: 不是 64 位小端 ELF
        NoExecutableSectionError: 没有可执行段
    """
    logger = Logger.get_logger("Image")
    if len(file_bytes) < 16 or file_bytes[:4] != ELF_MAGIC:
        raise NotElfError("输入不是 ELF 文件（魔数不匹配）")
    if file_bytes[4] != _ELFCLASS64:
        raise WrongElfClassError(f"只支持 ELF64，实际 EI_CLASS={file_bytes[4]}")
    if file_bytes[5] != _ELFDATA2LSB:
        raise WrongElfClassError("只支持小端 ELF")

    try:
        elf = ELFFile(io.BytesIO(file_bytes))
        section = elf.get_section_by_name(".text")
        if section is None or not section["sh_flags"] & SH_FLAGS.SHF_EXECINSTR:
            section = next(
                (s for s in elf.iter_sections() if s["sh_flags"] & SH_FLAGS.SHF_EXECINSTR),
                None,
            )
        if section is None:
            raise NoExecutableSectionError("ELF 中没有可执行段")
        data = section.data()
        base = section["sh_addr"]
        name = section.name
    except ELFError as e:
        raise NotElfError(f"ELF 解析失败: {e}") from e

    logger.debug(f"加载可执行段 {name}: 0x{base:x}, {len(data)} 字节")
    return CodeImage(base=base, data=data, origin=ImageOrigin.ELF_TEXT, section_name=name)


def write_patched_image(original: CodeImage, artifacts: HasPatchBytes) -> bytes:
    """
    把补丁字节覆盖到原始镜像上

    参数:
        original: 原始镜像
        artifacts: 带 patch_bytes（区域起始地址 -> 补丁字节）的产物

    返回:
        补丁后的代码字节；补丁区域以外与原始镜像逐字节相同

    异常:
        OverlappingPatchError: 两个补丁区域重叠
        ImageError: 补丁区域超出镜像
    """
    out = bytearray(original.data)
    previous_end = None
    for start in sorted(artifacts.patch_bytes):
        blob = artifacts.patch_bytes[start]
        if not original.contains(start, len(blob)):
            raise ImageError(f"补丁区域 0x{start:x}+{len(blob)} 超出镜像")
        if previous_end is not None and start < previous_end:
            raise OverlappingPatchError(
                f"补丁区域 0x{start:x} 与前一个区域（结束于 0x{previous_end:x}）重叠")
        offset = start - original.base
        out[offset:offset + len(blob)] = blob
        previous_end = start + len(blob)
    return bytes(out)
