"""Entropy coding of binary masks and the final-model file format.

Masks are coded with a static two-symbol model: the header carries the
number of ones, both sides derive the same fixed-point probability from it,
and a 32-bit range coder (byte-wise renormalisation, carry propagation
through a cached byte) codes the bits.

Wire format of a coded mask, little-endian::

    u64 n | u64 ones_count | payload bytes

Model file::

    b"FPM1" | u8 version | u32 arch_len | arch record | u64 seed | coded mask
"""
from dataclasses import dataclass
import math
import struct

import numpy as np

from .errors import DecodeError, FormatError
from .nn import Layer, NetworkArch

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a declared dependency
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f

PROB_BITS = 31
PROB_ONE = 1 << PROB_BITS
# range >= 2**24 after renormalisation; a probability of at least 2**7 / 2**31
# keeps both sub-intervals non-empty
PROB_MIN = 1 << 7
TOP = 1 << 24
HEADER_BITS = 128
_HEADER = struct.Struct("<QQ")


def empirical_entropy(p):
    """Binary entropy in bits, with 0 log 0 = 0."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    if p in (0.0, 1.0):
        return 0.0
    return -p * math.log2(p) - (1.0 - p) * math.log2(1.0 - p)


def clamped_frequency(ones, n):
    """Ones frequency clamped to [1/(2n), 1 - 1/(2n)]."""
    lo = 1.0 / (2 * n)
    return min(max(ones / n, lo), 1.0 - lo)


def model_probability(ones, n):
    """Fixed-point P(bit = 1) in units of 2**-31, computed with integers only."""
    lo = max(PROB_MIN, PROB_ONE // (2 * n))
    p = (2 * ones * PROB_ONE + n) // (2 * n)
    return min(max(p, lo), PROB_ONE - lo)


@njit(cache=True)
def _shift_low(low, cache, cache_size, pos, out):
    if low < 0xFF000000 or low >= 4294967296:
        carry = low >> 32
        temp = cache
        while True:
            if pos >= out.shape[0]:
                return low, cache, cache_size, -1
            out[pos] = (temp + carry) & 0xFF
            pos += 1
            temp = 0xFF
            cache_size -= 1
            if cache_size == 0:
                break
        cache = (low >> 24) & 0xFF
    cache_size += 1
    low = (low & 0x00FFFFFF) << 8
    return low, cache, cache_size, pos


@njit(cache=True)
def _encode_kernel(bits, prob, out):
    # returns bytes written including the leading cache byte, or -1 on overflow
    low = 0
    rng = 0xFFFFFFFF
    cache = 0
    cache_size = 1
    pos = 0
    for i in range(bits.shape[0]):
        bound = (rng * prob) >> 31
        if bits[i] != 0:
            rng = bound
        else:
            low += bound
            rng -= bound
        while rng < 16777216:
            rng = (rng << 8) & 0xFFFFFFFF
            low, cache, cache_size, pos = _shift_low(low, cache, cache_size, pos, out)
            if pos < 0:
                return -1
    for _ in range(5):
        low, cache, cache_size, pos = _shift_low(low, cache, cache_size, pos, out)
        if pos < 0:
            return -1
    return pos


@njit(cache=True)
def _decode_kernel(payload, n, prob, out):
    # returns 0 on success, -1 if the payload runs out, -2 on trailing bytes
    size = payload.shape[0]
    if size < 4:
        return -1
    code = 0
    for j in range(4):
        code = (code << 8) | payload[j]
    pos = 4
    rng = 0xFFFFFFFF
    for i in range(n):
        bound = (rng * prob) >> 31
        if code < bound:
            out[i] = 1
            rng = bound
        else:
            out[i] = 0
            code -= bound
            rng -= bound
        while rng < 16777216:
            if pos >= size:
                return -1
            rng = (rng << 8) & 0xFFFFFFFF
            code = ((code << 8) | payload[pos]) & 0xFFFFFFFF
            pos += 1
    if pos != size:
        return -2
    return 0


@dataclass(frozen=True)
class CodedMask:
    n: int
    ones_count: int
    payload: bytes

    def __post_init__(self):
        if self.n < 1 or not 0 <= self.ones_count <= self.n:
            raise FormatError(f"invalid coded mask header n={self.n} ones={self.ones_count}")

    @property
    def payload_bits(self):
        return 8 * len(self.payload)

    @property
    def total_bits(self):
        return HEADER_BITS + self.payload_bits

    @property
    def frequency(self):
        return self.ones_count / self.n

    def to_bytes(self):
        return _HEADER.pack(self.n, self.ones_count) + self.payload

    @classmethod
    def from_bytes(cls, data):
        data = bytes(data)
        if len(data) < _HEADER.size:
            raise DecodeError("coded mask shorter than its header")
        n, ones = _HEADER.unpack_from(data)
        try:
            return cls(n, ones, data[_HEADER.size:])
        except FormatError as exc:
            raise DecodeError(str(exc)) from None


def encode_mask(mask):
    bits = np.ascontiguousarray(np.asarray(mask).reshape(-1) != 0, dtype=np.uint8)
    n = bits.shape[0]
    if n < 1:
        raise ValueError("cannot encode an empty mask")
    ones = int(bits.sum())
    out = np.empty(n // 8 + 64, dtype=np.uint8)
    written = _encode_kernel(bits, model_probability(ones, n), out)
    if written < 0:
        raise RuntimeError("range coder output buffer overflow")
    # the first cached byte is always zero and is not transmitted
    assert out[0] == 0
    return CodedMask(n, ones, out[1:written].tobytes())


def decode_mask(coded):
    if isinstance(coded, (bytes, bytearray, memoryview)):
        coded = CodedMask.from_bytes(coded)
    payload = np.frombuffer(coded.payload, dtype=np.uint8)
    out = np.empty(coded.n, dtype=np.uint8)
    status = _decode_kernel(payload, coded.n, model_probability(coded.ones_count, coded.n), out)
    if status == -1:
        raise DecodeError("truncated mask payload")
    if status == -2:
        raise DecodeError("trailing bytes after mask payload")
    if int(out.sum()) != coded.ones_count:
        raise DecodeError("decoded ones count does not match header")
    return out


def bitrate(coded):
    """Bits per parameter including the 128-bit header."""
    return coded.total_bits / coded.n


MAGIC = b"FPM1"
VERSION = 1
ARCH_RECORD_VERSION = 1
_ACT_CODES = {"relu": 0, "identity": 1}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}


def _arch_record(arch):
    body = struct.pack("<BI", ARCH_RECORD_VERSION, len(arch.layers))
    for layer in arch.layers:
        body += struct.pack("<IIB", layer.fan_in, layer.fan_out, _ACT_CODES[layer.activation])
    return struct.pack("<I", len(body)) + body


def _parse_arch(data, offset):
    if len(data) < offset + 4:
        raise FormatError("truncated architecture record")
    (length,) = struct.unpack_from("<I", data, offset)
    offset += 4
    body = data[offset:offset + length]
    if len(body) != length or length < 5:
        raise FormatError("truncated architecture record")
    version, count = struct.unpack_from("<BI", body)
    if version != ARCH_RECORD_VERSION:
        raise FormatError(f"unsupported architecture record version {version}")
    if length != 5 + 9 * count:
        raise FormatError("architecture record length mismatch")
    layers = []
    for i in range(count):
        fan_in, fan_out, act = struct.unpack_from("<IIB", body, 5 + 9 * i)
        if act not in _ACT_NAMES:
            raise FormatError(f"unknown activation code {act}")
        layers.append(Layer(fan_in, fan_out, _ACT_NAMES[act]))
    try:
        arch = NetworkArch(tuple(layers))
    except ValueError as exc:
        raise FormatError(f"invalid architecture: {exc}") from None
    return arch, offset + length


def serialize_model(arch, seed, final_mask):
    mask = np.asarray(final_mask)
    if mask.shape != (arch.num_params,):
        raise ValueError(f"mask length {mask.shape} != d={arch.num_params}")
    coded = encode_mask(mask)
    return (MAGIC + struct.pack("<B", VERSION) + _arch_record(arch)
            + struct.pack("<Q", int(seed)) + coded.to_bytes())


def read_model(data):
    """Parse a model file into ``(arch, seed, CodedMask)`` without decoding the mask."""
    data = bytes(data)
    if data[:4] != MAGIC:
        raise FormatError("not a fedpm model file (bad magic)")
    if len(data) < 5 or data[4] != VERSION:
        raise FormatError(f"unsupported model file version {data[4] if len(data) > 4 else None}")
    arch, offset = _parse_arch(data, 5)
    if len(data) < offset + 8:
        raise FormatError("truncated model file")
    (seed,) = struct.unpack_from("<Q", data, offset)
    coded = CodedMask.from_bytes(data[offset + 8:])
    if coded.n != arch.num_params:
        raise FormatError(f"mask length {coded.n} != architecture parameter count {arch.num_params}")
    return arch, seed, coded


def deserialize_model(data):
    arch, seed, coded = read_model(data)
    return arch, seed, decode_mask(coded)


def model_bitrate(data):
    """Whole-file bits per parameter."""
    arch, _, _ = read_model(data)
    return 8 * len(data) / arch.num_params
