"""Search compiler optimization-flag sequences that maximize binary code differences."""

from .flagspace import Chromosome, ConstraintSet, FlagDescriptor, FlagSpace, decode, repair, verify
from .fitness import CodeSection, CompressorId, compressed_len, extract_code_section, ncd
from .ga import GaConfig, TerminationCriteria

__all__ = [
    "Chromosome", "CodeSection", "CompressorId", "ConstraintSet", "FlagDescriptor", "FlagSpace",
    "GaConfig", "TerminationCriteria", "compressed_len", "decode", "extract_code_section", "ncd",
    "repair", "verify",
]
__version__ = "0.1.0"
