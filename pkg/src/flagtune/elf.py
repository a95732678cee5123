"""Just enough ELF to find ``.text``: the file header and section header table.

Little-endian 32- and 64-bit files are supported.  ``build_minimal_elf64``
writes the smallest well-formed relocatable object carrying a ``.text``
section; the synthetic compiler backend uses it.
"""

from __future__ import annotations

import struct

from .errors import ExtractionError

ELF_MAGIC = b"\x7fELF"
ELFCLASS32, ELFCLASS64 = 1, 2
ELFDATA2LSB = 1

SHT_PROGBITS = 1
SHT_STRTAB = 3
SHF_ALLOC = 0x2
SHF_EXECINSTR = 0x4

# (header size, e_shoff/e_shentsize/e_shnum/e_shstrndx layout, section header layout)
_LAYOUT = {
    ELFCLASS32: ("<16sHHIIIIIHHHHHH", "<IIIIIIIIII"),
    ELFCLASS64: ("<16sHHIQQQIHHHHHH", "<IIQQQQIIQQ"),
}


def _sections(data: bytes):
    if len(data) < 4 or data[:4] != ELF_MAGIC:
        raise ExtractionError("missing ELF magic")
    if len(data) < 16:
        raise ExtractionError("truncated ELF identification")
    elfclass, encoding = data[4], data[5]
    if elfclass not in _LAYOUT:
        raise ExtractionError(f"unsupported ELF class {elfclass}")
    if encoding != ELFDATA2LSB:
        raise ExtractionError("only little-endian ELF is supported")
    ehdr_fmt, shdr_fmt = _LAYOUT[elfclass]
    if len(data) < struct.calcsize(ehdr_fmt):
        raise ExtractionError("truncated ELF header")
    (_, _, _, _, _, _, shoff, _, _, _, _, shentsize, shnum, shstrndx) = struct.unpack_from(ehdr_fmt, data)
    if shoff == 0 or shnum == 0:
        raise ExtractionError("ELF file has no section header table")
    if shentsize < struct.calcsize(shdr_fmt):
        raise ExtractionError(f"section header entry size {shentsize} too small")
    if shoff + shnum * shentsize > len(data):
        raise ExtractionError(
            f"truncated section headers: table ends at {shoff + shnum * shentsize}, file has {len(data)} bytes"
        )
    headers = [struct.unpack_from(shdr_fmt, data, shoff + k * shentsize) for k in range(shnum)]
    if shstrndx >= shnum:
        raise ExtractionError(f"section name table index {shstrndx} out of range")
    # name, type, flags, addr, offset, size
    _, _, _, _, str_off, str_size, *_ = headers[shstrndx]
    if str_off + str_size > len(data):
        raise ExtractionError("truncated section name table")
    strtab = data[str_off:str_off + str_size]

    for h in headers:
        name_off, sh_type, _, _, offset, size = h[:6]
        end = strtab.find(b"\0", name_off)
        name = strtab[name_off:end if end >= 0 else None].decode("latin-1")
        yield name, sh_type, offset, size


def text_section(data: bytes) -> bytes:
    for name, sh_type, offset, size in _sections(data):
        if name != ".text":
            continue
        if offset + size > len(data):
            raise ExtractionError(".text section extends past end of file")
        return data[offset:offset + size]
    raise ExtractionError("no .text section")


def build_minimal_elf64(text: bytes) -> bytes:
    """A relocatable x86-64 ELF with sections: null, .text, .shstrtab."""
    shstrtab = b"\0.text\0.shstrtab\0"
    ehsize, shentsize = 64, 64
    text_off = ehsize
    str_off = text_off + len(text)
    shoff = (str_off + len(shstrtab) + 7) & ~7

    ident = ELF_MAGIC + bytes([ELFCLASS64, ELFDATA2LSB, 1, 0]) + bytes(8)
    header = struct.pack(
        "<16sHHIQQQIHHHHHH",
        ident, 1, 62, 1, 0, 0, shoff, 0, ehsize, 0, 0, shentsize, 3, 2,
    )
    null = bytes(shentsize)
    text_hdr = struct.pack("<IIQQQQIIQQ", 1, SHT_PROGBITS, SHF_ALLOC | SHF_EXECINSTR, 0, text_off, len(text), 0, 0, 16, 0)
    str_hdr = struct.pack("<IIQQQQIIQQ", 7, SHT_STRTAB, 0, 0, str_off, len(shstrtab), 0, 0, 1, 0)
    body = header + text + shstrtab
    body += bytes(shoff - len(body))
    return body + null + text_hdr + str_hdr
