"""WAV (RIFF) reading/writing and sample-rate conversion.

Reading accepts PCM 16/24/32-bit and 32-bit float, any channel count;
everything is downmixed to mono by arithmetic mean and resampled to the
target rate (default 16 kHz) with a Kaiser-windowed polyphase sinc
interpolator. Writing always emits mono 16-bit PCM.
"""

import io
import struct
from math import gcd

import numpy as np

from .dsp import Waveform
from .errors import CorruptFile, UnsupportedFormat

TARGET_RATE = 16000

_FMT_PCM = 0x0001
_FMT_FLOAT = 0x0003
_FMT_EXTENSIBLE = 0xFFFE


def _parse_chunks(data: bytes):
    if len(data) < 12:
        raise CorruptFile("file shorter than a RIFF header")
    if data[0:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise UnsupportedFormat("not a RIFF/WAVE file")
    pos = 12
    chunks = {}
    while pos + 8 <= len(data):
        cid = data[pos : pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body_start = pos + 8
        if body_start + size > len(data):
            raise CorruptFile(f"chunk {cid!r} claims {size} bytes past end of file")
        if cid not in chunks:  # first occurrence wins
            chunks[cid] = data[body_start : body_start + size]
        pos = body_start + size + (size & 1)  # chunks are word-aligned
    return chunks


def _decode_samples(body: bytes, fmt: int, bits: int, n_channels: int) -> np.ndarray:
    if fmt == _FMT_FLOAT:
        if bits != 32:
            raise UnsupportedFormat(f"{bits}-bit float WAV not supported")
        x = np.frombuffer(body, dtype="<f4").astype(np.float64)
    elif fmt == _FMT_PCM:
        if bits == 16:
            x = np.frombuffer(body, dtype="<i2").astype(np.float64) / 32768.0
        elif bits == 32:
            x = np.frombuffer(body, dtype="<i4").astype(np.float64) / 2147483648.0
        elif bits == 24:
            raw = np.frombuffer(body, dtype=np.uint8)
            if raw.size % 3:
                raise CorruptFile("24-bit data chunk is not a whole number of samples")
            triples = raw.reshape(-1, 3).astype(np.int32)
            vals = triples[:, 0] | (triples[:, 1] << 8) | (triples[:, 2] << 16)
            vals = np.where(vals >= 1 << 23, vals - (1 << 24), vals)
            x = vals.astype(np.float64) / float(1 << 23)
        else:
            raise UnsupportedFormat(f"{bits}-bit PCM not supported")
    else:
        raise UnsupportedFormat(f"WAV format tag 0x{fmt:04x} not supported")
    if x.size % n_channels:
        raise CorruptFile("data chunk is not a whole number of frames")
    return x.reshape(-1, n_channels)


def load_wav(path, target_rate: int = TARGET_RATE) -> Waveform:
    """Read a WAV file as mono float64 at target_rate.

    Raises UnsupportedFormat for non-WAV containers or codecs we do not
    decode, CorruptFile for truncated or inconsistent chunk structure.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    chunks = _parse_chunks(data)
    if b"fmt " not in chunks:
        raise CorruptFile("missing fmt chunk")
    if b"data" not in chunks:
        raise CorruptFile("missing data chunk")
    fmt_body = chunks[b"fmt "]
    if len(fmt_body) < 16:
        raise CorruptFile("fmt chunk too small")
    fmt, n_channels, rate, _, _, bits = struct.unpack_from("<HHIIHH", fmt_body, 0)
    if fmt == _FMT_EXTENSIBLE:
        if len(fmt_body) < 26:
            raise CorruptFile("extensible fmt chunk too small")
        (fmt,) = struct.unpack_from("<H", fmt_body, 24)  # SubFormat GUID leads with the tag
    if n_channels < 1:
        raise CorruptFile("channel count of zero")
    if rate <= 0:
        raise CorruptFile("non-positive sample rate")

    frames = _decode_samples(chunks[b"data"], fmt, bits, n_channels)
    mono = frames.mean(axis=1)
    mono = resample(mono, rate, target_rate)
    return Waveform(np.clip(mono, -1.0, 1.0), target_rate)


def probe_wav(path, target_rate: int = TARGET_RATE) -> int:
    """Sample count the file will have after ingest normalization, without
    decoding the audio."""
    with open(path, "rb") as fh:
        data = fh.read()
    chunks = _parse_chunks(data)
    if b"fmt " not in chunks or b"data" not in chunks:
        raise CorruptFile(f"{path}: missing fmt or data chunk")
    fmt, n_channels, rate, _, block_align, bits = struct.unpack_from(
        "<HHIIHH", chunks[b"fmt "], 0
    )
    if n_channels < 1 or rate <= 0:
        raise CorruptFile(f"{path}: nonsense fmt chunk")
    bytes_per_frame = block_align or n_channels * max(bits // 8, 1)
    n_frames = len(chunks[b"data"]) // bytes_per_frame
    if rate == target_rate:
        return n_frames
    g = gcd(rate, target_rate)
    return (n_frames * (target_rate // g)) // (rate // g)


def wav_bytes(wave: Waveform) -> bytes:
    """Serialize a waveform as mono 16-bit PCM WAV bytes."""
    # scale by 32768 (the loader's divisor) and clip the one overflow code
    pcm = np.clip(np.round(wave.samples * 32768.0), -32768, 32767).astype("<i2")
    body = pcm.tobytes()
    out = io.BytesIO()
    out.write(b"RIFF")
    out.write(struct.pack("<I", 36 + len(body)))
    out.write(b"WAVE")
    out.write(b"fmt ")
    out.write(
        struct.pack(
            "<IHHIIHH",
            16,
            _FMT_PCM,
            1,
            wave.sample_rate,
            wave.sample_rate * 2,
            2,
            16,
        )
    )
    out.write(b"data")
    out.write(struct.pack("<I", len(body)))
    out.write(body)
    return out.getvalue()


def save_wav(path, wave: Waveform) -> None:
    with open(path, "wb") as fh:
        fh.write(wav_bytes(wave))


# --- resampling -----------------------------------------------------------

_KAISER_BETA = 8.6
_ROLLOFF = 0.9475
_TAPS = 64  # taps per polyphase branch

_table_cache: dict = {}


def _polyphase_table(up: int, down: int) -> np.ndarray:
    """Kaiser-windowed sinc filter table, shape (up, _TAPS)."""
    key = (up, down)
    table = _table_cache.get(key)
    if table is not None:
        return table
    half = _TAPS // 2
    cutoff = _ROLLOFF * min(1.0, up / down)  # fraction of the input Nyquist
    j = np.arange(_TAPS)
    table = np.empty((up, _TAPS))
    for phase in range(up):
        frac = phase / up  # fractional input-sample position of this branch
        offsets = j - (half - 1) - frac
        u = offsets / half
        win = np.where(np.abs(u) < 1.0, np.i0(_KAISER_BETA * np.sqrt(np.maximum(0.0, 1.0 - u * u))), 0.0)
        win /= np.i0(_KAISER_BETA)
        h = cutoff * np.sinc(cutoff * offsets) * win
        table[phase] = h / h.sum()  # unity DC gain per branch
    _table_cache[key] = table
    return table


def resample(x: np.ndarray, rate_in: int, rate_out: int) -> np.ndarray:
    """Rational-ratio resampling by windowed-sinc polyphase interpolation."""
    x = np.asarray(x, dtype=np.float64)
    if rate_in == rate_out:
        return x.copy()
    if rate_in <= 0 or rate_out <= 0:
        raise ValueError("sample rates must be positive")
    g = gcd(rate_in, rate_out)
    up, down = rate_out // g, rate_in // g
    n_out = (x.size * up) // down
    if n_out == 0:
        return np.zeros(0)

    table = _polyphase_table(up, down)
    half = _TAPS // 2
    padded = np.concatenate([np.zeros(half), x, np.zeros(half + down + 1)])
    out = np.empty(n_out)
    # Output n sits at input position n*down/up; outputs sharing n % up share
    # a filter branch and read the input on a stride-`down` grid.
    for r in range(min(up, n_out)):
        phase = (r * down) % up
        base = (r * down) // up
        count = 1 + (n_out - 1 - r) // up
        coeffs = table[phase]
        acc = np.zeros(count)
        # tap j reads input sample (base - half + 1 + j); the left padding of
        # `half` zeros shifts that to padded index base + 1 + j
        start = base + 1
        for j in range(_TAPS):
            acc += coeffs[j] * padded[start + j : start + j + count * down : down]
        out[r::up] = acc
    return out
