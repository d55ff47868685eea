"""Synthetic monophonic note clips, frame labels and dataset manifests.

Clips are additive-synthesis tones (fundamental plus harmonics 2..8 at 1/h),
one note at a time in the octave C4..B4, separated by short silences.
"""
from concurrent.futures import ProcessPoolExecutor
import csv
from dataclasses import dataclass
import math
from pathlib import Path

import numpy as np
import yaml

from .comb import AudioSignal
from .layer import EnvelopeConfig
from .wav import wav_read_pcm, wav_write

NOTE_NAMES = ("C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B")
SPLITS = ("train", "valid", "test")
_SPLIT_OFFSET = {"train": 0, "valid": 100_000, "test": 200_000}
MAX_CLIPS_PER_SPLIT = 100_000

SYNTH_DEFAULTS = {
    "min_notes": 3,
    "max_notes": 10,
    "duration_s": [0.2, 1.0],
    "velocity": [0.3, 1.0],
    "gap_s": [0.0, 0.2],
    "tail_s": 0.1,
    "harmonics": 8,
    "decay_rate": 3.0,
    "onset_ramp_s": 0.005,
    "peak": 0.9,
}


@dataclass(frozen=True)
class NoteEvent:
    pitch_class: int
    onset: float
    duration: float
    velocity: float

    @property
    def end(self):
        return self.onset + self.duration

    @property
    def frequency(self):
        return pitch_frequency(self.pitch_class)


@dataclass
class LabelGrid:
    frames: np.ndarray  # (T', 12) uint8
    frame_rate: float

    def to_csv(self, path):
        active = self.frames.argmax(axis=1)
        any_active = self.frames.any(axis=1)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["frame_index", "pitch_class"])
            for i in range(self.frames.shape[0]):
                w.writerow([i, int(active[i]) if any_active[i] else -1])

    @classmethod
    def from_csv(cls, path, frame_rate):
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        frames = np.zeros((len(rows), 12), dtype=np.uint8)
        for i, row in enumerate(rows):
            if int(row["frame_index"]) != i:
                raise ValueError("%s: frame indices must be consecutive from 0" % path)
            pc = int(row["pitch_class"])
            if pc >= 0:
                frames[i, pc] = 1
        return cls(frames=frames, frame_rate=frame_rate)


def pitch_frequency(pitch_class, octave=4):
    midi = 12 * (octave + 1) + pitch_class
    return 440.0 * 2.0 ** ((midi - 69) / 12.0)


def sample_note_sequence(seed, params=SYNTH_DEFAULTS):
    """Draw a random monophonic note sequence; deterministic per seed."""
    rng = np.random.default_rng(seed)
    count = int(rng.integers(params["min_notes"], params["max_notes"] + 1))
    events = []
    t = 0.0
    for _ in range(count):
        t += float(rng.uniform(*params["gap_s"]))
        dur = float(rng.uniform(*params["duration_s"]))
        events.append(NoteEvent(pitch_class=int(rng.integers(0, 12)), onset=t, duration=dur,
                                velocity=float(rng.uniform(*params["velocity"]))))
        t += dur
    return events


def clip_samples(events, sample_rate, params=SYNTH_DEFAULTS):
    end = max((e.end for e in events), default=0.0) + params["tail_s"]
    return int(math.ceil(end * sample_rate))


def synthesize_clip(events, sample_rate=16000, params=SYNTH_DEFAULTS, normalize=True):
    n = clip_samples(events, sample_rate, params)
    out = np.zeros(n)
    nyquist = sample_rate / 2
    lowest = min((e.frequency for e in events), default=None)
    if lowest is not None and sample_rate / lowest < 1:
        raise ValueError("sample rate %d too low for %.1f Hz" % (sample_rate, lowest))
    for e in events:
        start = int(round(e.onset * sample_rate))
        length = min(int(round(e.duration * sample_rate)), n - start)
        t = np.arange(length) / sample_rate
        tone = np.zeros(length)
        for h in range(1, params["harmonics"] + 1):
            if h * e.frequency >= nyquist:
                break
            tone += np.sin(2.0 * np.pi * h * e.frequency * t) / h
        env = np.exp(-params["decay_rate"] * t / e.duration)
        env *= np.minimum(1.0, t / params["onset_ramp_s"])
        out[start:start + length] += e.velocity * env * tone
    if normalize:
        peak = np.max(np.abs(out)) if n else 0.0
        if peak > 0:
            out *= params["peak"] / peak
    return AudioSignal(samples=out.astype(np.float32), sample_rate=sample_rate)


def events_to_labelgrid(events, n_samples, sample_rate=16000, env=EnvelopeConfig()):
    """Frame t is active for class c iff its centre falls in [onset, onset+duration)."""
    F = env.n_frames(n_samples)
    frames = np.zeros((max(F, 0), 12), dtype=np.uint8)
    centres = (np.arange(max(F, 0)) * env.pool_stride + env.pool_window / 2) / sample_rate
    for e in events:
        frames[(centres >= e.onset) & (centres < e.end), e.pitch_class] = 1
    return LabelGrid(frames=frames, frame_rate=sample_rate / env.pool_stride)


# ---------------------------------------------------------------- datasets

@dataclass
class DatasetManifest:
    split: str
    clips: list  # dicts: wav, labels, duration, seed, n_samples
    sample_rate: int
    pool_window: int
    pool_stride: int
    synthesis: dict
    root: Path = None

    @property
    def env(self):
        return EnvelopeConfig(self.pool_window, self.pool_stride)

    @property
    def frame_rate(self):
        return self.sample_rate / self.pool_stride

    def path(self, rel):
        return Path(self.root) / rel

    def write(self, path):
        doc = {
            "split": self.split,
            "sample_rate_hz": self.sample_rate,
            "pool_window_samples": self.pool_window,
            "pool_stride_samples": self.pool_stride,
            "synthesis": self.synthesis,
            "clips": self.clips,
        }
        with open(path, "w") as fh:
            yaml.safe_dump(doc, fh, sort_keys=False, default_flow_style=None, width=120)

    @classmethod
    def read(cls, path):
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError("manifest not found: %s" % path)
        with open(path) as fh:
            doc = yaml.safe_load(fh)
        try:
            return cls(split=doc["split"], clips=doc["clips"],
                       sample_rate=int(doc["sample_rate_hz"]),
                       pool_window=int(doc["pool_window_samples"]),
                       pool_stride=int(doc["pool_stride_samples"]),
                       synthesis=doc["synthesis"], root=path.parent)
        except (KeyError, TypeError) as exc:
            raise ValueError("malformed manifest %s: %s" % (path, exc)) from exc


def clip_seed(base_seed, split, index):
    if index >= MAX_CLIPS_PER_SPLIT:
        raise ValueError("at most %d clips per split" % MAX_CLIPS_PER_SPLIT)
    return base_seed * 1_000_000 + _SPLIT_OFFSET[split] + index


def _make_clip(job):
    out_dir, split, index, seed, sample_rate, env, params = job
    events = sample_note_sequence(seed, params)
    sig = synthesize_clip(events, sample_rate, params)
    stem = "%s/clip_%06d" % (split, index)
    wav_write(Path(out_dir) / (stem + ".wav"), sig)
    events_to_labelgrid(events, len(sig), sample_rate, env).to_csv(
        Path(out_dir) / (stem + ".csv"))
    return {"wav": stem + ".wav", "labels": stem + ".csv",
            "duration": round(sig.duration, 6), "seed": seed, "n_samples": len(sig)}


def manifest_path(out_dir, split):
    return Path(out_dir) / ("manifest_%s.yaml" % split)


def generate_dataset(out_dir, seed=0, counts=None, sample_rate=16000, env=EnvelopeConfig(),
                     params=SYNTH_DEFAULTS, jobs=1):
    """Synthesize clips + labels for each split and write one manifest per split."""
    counts = dict(counts or {"train": 2000, "valid": 200, "test": 200})
    for split, n in counts.items():
        if split not in SPLITS:
            raise ValueError("unknown split %r" % split)
        if n < 1:
            raise ValueError("split %r needs at least one clip" % split)
    out_dir = Path(out_dir)
    manifests = {}
    for split, n in counts.items():
        (out_dir / split).mkdir(parents=True, exist_ok=True)
        work = [(str(out_dir), split, i, clip_seed(seed, split, i), sample_rate, env, params)
                for i in range(n)]
        if jobs > 1:
            with ProcessPoolExecutor(jobs) as pool:
                clips = list(pool.map(_make_clip, work, chunksize=16))
        else:
            clips = [_make_clip(w) for w in work]
        m = DatasetManifest(split=split, clips=clips, sample_rate=sample_rate,
                            pool_window=env.pool_window, pool_stride=env.pool_stride,
                            synthesis=dict(params, base_seed=seed), root=out_dir)
        m.write(manifest_path(out_dir, split))
        manifests[split] = m
    return manifests


@dataclass
class LoadedSplit:
    audio: list   # int16 arrays, one per clip
    labels: list  # (T', 12) uint8 arrays
    manifest: DatasetManifest


def load_split(manifest):
    if not isinstance(manifest, DatasetManifest):
        manifest = DatasetManifest.read(manifest)
    audio, labels = [], []
    for clip in manifest.clips:
        pcm, rate = wav_read_pcm(manifest.path(clip["wav"]))
        if rate != manifest.sample_rate:
            raise ValueError("%s: sample rate %d != manifest %d" % (clip["wav"], rate,
                                                                    manifest.sample_rate))
        grid = LabelGrid.from_csv(manifest.path(clip["labels"]), manifest.frame_rate)
        audio.append(pcm)
        labels.append(grid.frames)
    return LoadedSplit(audio=audio, labels=labels, manifest=manifest)


def pcm_to_float(pcm):
    return pcm.astype(np.float64) / 32767.0
