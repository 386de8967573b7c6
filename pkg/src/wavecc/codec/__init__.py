"""Range coder, bitstream container, refinement net and the image pipeline."""

from wavecc.codec.bitstream import Header, read_bitstream, write_bitstream
from wavecc.codec.dequant import DequantNet, dequant_refine
from wavecc.codec.pipeline import CodingResult, SubbandReport, decode_image, encode_image, write_report
from wavecc.codec.rangecoder import RangeDecoder, RangeEncoder, range_decode, range_encode

__all__ = [
    "CodingResult", "DequantNet", "Header", "RangeDecoder", "RangeEncoder", "SubbandReport",
    "decode_image", "dequant_refine", "encode_image", "range_decode", "range_encode",
    "read_bitstream", "write_bitstream", "write_report",
]
