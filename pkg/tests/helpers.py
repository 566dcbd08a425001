"""
测试辅助：手写小程序的汇编和字节级 ELF64 构造
"""
import struct
from typing import Iterable, List, Sequence, Tuple

from src.patcher.image import CodeImage, load_raw
from src.patcher.isa import assemble_bytes


Insn = Tuple[str, dict]

SHT_PROGBITS = 1
SHT_STRTAB = 3
SHF_WRITE = 0x1
SHF_ALLOC = 0x2
SHF_EXECINSTR = 0x4
EM_RISCV = 243


def asm(*insns: Insn) -> bytes:
    """把 (助记符, 字段) 序列依次汇编"""
    return b"".join(assemble_bytes(m, **fields) for m, fields in insns)


def image_of(*insns: Insn, base: int = 0x10000) -> CodeImage:
    return load_raw(asm(*insns), base)


def i(mnemonic: str, **fields: int) -> Insn:
    return mnemonic, fields


def elf64(sections: Sequence[Tuple[str, int, int, bytes]], elf_class: int = 2,
          data_encoding: int = 1) -> bytes:
    """
    构造只有节头表的最小 ELF64 文件

    参数:
        sections: (名称, sh_flags, sh_addr, 内容)
        elf_class: EI_CLASS（2 为 64 位）
        data_encoding: EI_DATA（1 为小端）
    """
    names = b"\x00"
    name_offsets = []
    for name, *_ in sections:
        name_offsets.append(len(names))
        names += name.encode() + b"\x00"
    shstrtab_name = len(names)
    names += b".shstrtab\x00"

    body = bytearray()
    offset = 64
    placed: List[Tuple[int, int]] = []
    for _, _, _, data in sections:
        placed.append((offset + len(body), len(data)))
        body += data
        while len(body) % 8:
            body += b"\x00"
    strtab_offset = offset + len(body)
    body += names
    while len(body) % 8:
        body += b"\x00"
    shoff = offset + len(body)

    headers = [struct.pack("<IIQQQQIIQQ", 0, 0, 0, 0, 0, 0, 0, 0, 0, 0)]
    for (name, flags, addr, data), name_off, (off, size) in zip(sections, name_offsets, placed):
        headers.append(struct.pack("<IIQQQQIIQQ", name_off, SHT_PROGBITS, flags, addr,
                                   off, size, 0, 0, 4, 0))
    headers.append(struct.pack("<IIQQQQIIQQ", shstrtab_name, SHT_STRTAB, 0, 0,
                               strtab_offset, len(names), 0, 0, 1, 0))

    ident = b"\x7fELF" + bytes([elf_class, data_encoding, 1, 0]) + bytes(8)
    header = struct.pack("<16sHHIQQQIHHHHHH", ident, 2, EM_RISCV, 1, 0, 0, shoff, 0,
                         64, 56, 0, 64, len(headers), len(headers) - 1)
    return header + bytes(body) + b"".join(headers)


def text_elf(code: bytes, vaddr: int = 0x10000,
             extra: Iterable[Tuple[str, int, int, bytes]] = ()) -> bytes:
    return elf64([(".text", SHF_ALLOC | SHF_EXECINSTR, vaddr, code)] + list(extra))
