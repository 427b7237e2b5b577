"""24-bit stereo WAV export (digital full scale = amplitude 1.0)."""

from __future__ import annotations

import io
import wave

import numpy as np

from .signals import StereoSignal

FULL_SCALE = 2**23 - 1


def _pack_24bit(frames: np.ndarray) -> bytes:
    """Interleaved float frames (n, 2) -> little-endian 24-bit PCM."""
    ints = np.clip(
        np.rint(frames * FULL_SCALE), -(2**23), 2**23 - 1
    ).astype("<i4")
    raw = ints.reshape(-1, 1).view(np.uint8)
    return raw[:, :3].tobytes()


def wav_bytes(stereo: StereoSignal) -> bytes:
    """Serialize a stereo signal as a 24-bit PCM WAV file in memory."""
    frames = np.stack([stereo.left.samples, stereo.right.samples], axis=1)
    buf = io.BytesIO()
    with wave.open(buf, "wb") as wf:
        wf.setnchannels(2)
        wf.setsampwidth(3)
        wf.setframerate(int(round(stereo.sample_rate)))
        wf.writeframes(_pack_24bit(frames))
    return buf.getvalue()


def write_wav(path, stereo: StereoSignal) -> None:
    with open(path, "wb") as fh:
        fh.write(wav_bytes(stereo))


def read_wav(path_or_bytes) -> tuple[np.ndarray, int]:
    """Read a 24-bit stereo WAV back into float frames (n, 2) and rate."""
    src = (
        io.BytesIO(path_or_bytes)
        if isinstance(path_or_bytes, (bytes, bytearray))
        else path_or_bytes
    )
    with wave.open(src, "rb") as wf:
        if wf.getsampwidth() != 3:
            raise ValueError("expected 24-bit samples")
        n = wf.getnframes()
        raw = np.frombuffer(wf.readframes(n), dtype=np.uint8).reshape(-1, 3)
        rate = wf.getframerate()
        channels = wf.getnchannels()
    ints = (
        raw[:, 0].astype(np.int32)
        | (raw[:, 1].astype(np.int32) << 8)
        | (raw[:, 2].astype(np.int32) << 16)
    )
    ints = np.where(ints >= 2**23, ints - 2**24, ints)
    return (ints / FULL_SCALE).reshape(-1, channels), rate
