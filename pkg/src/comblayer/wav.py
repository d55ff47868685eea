"""16-bit PCM mono WAV persistence on top of the stdlib ``wave`` module."""
import wave

import numpy as np

from .comb import AudioSignal


class WavFormatError(ValueError):
    pass


def wav_write(path, signal):
    """Write ``signal`` as PCM16. Samples are clipped to [-1, 1] then quantized."""
    x = np.clip(np.asarray(signal.samples, dtype=np.float64), -1.0, 1.0)
    pcm = np.round(x * 32767.0).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(int(signal.sample_rate))
        wf.writeframes(pcm.tobytes())


def wav_read_pcm(path):
    """Return ``(int16 samples, sample_rate)`` after validating the header."""
    try:
        with wave.open(str(path), "rb") as wf:
            channels = wf.getnchannels()
            width = wf.getsampwidth()
            rate = wf.getframerate()
            n = wf.getnframes()
            if channels != 1:
                raise WavFormatError("%s: %d channels, only mono is supported" % (path, channels))
            if width != 2:
                raise WavFormatError("%s: %d-bit samples, only 16-bit PCM is supported"
                                     % (path, 8 * width))
            data = wf.readframes(n)
    except (wave.Error, EOFError) as exc:
        raise WavFormatError("%s: malformed WAV header (%s)" % (path, exc)) from exc
    if len(data) != 2 * n:
        raise WavFormatError("%s: truncated, header promises %d frames but %d are present"
                             % (path, n, len(data) // 2))
    if rate <= 0:
        raise WavFormatError("%s: sample rate %d" % (path, rate))
    return np.frombuffer(data, dtype="<i2").copy(), rate


def wav_read(path):
    pcm, rate = wav_read_pcm(path)
    return AudioSignal(samples=(pcm.astype(np.float32) / np.float32(32767.0)), sample_rate=rate)
