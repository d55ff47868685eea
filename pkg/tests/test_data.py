import wave

import numpy as np
import pytest

from comblayer.comb import AudioSignal
from comblayer.data import (SYNTH_DEFAULTS, DatasetManifest, LabelGrid, NoteEvent, clip_seed,
                            events_to_labelgrid, generate_dataset, load_split, manifest_path,
                            pcm_to_float, pitch_frequency, sample_note_sequence, synthesize_clip)
from comblayer.layer import EnvelopeConfig
from comblayer.wav import WavFormatError, wav_read, wav_write

ENV = EnvelopeConfig()


class TestSequences:
    def test_counts_in_range(self):
        counts = [len(sample_note_sequence(s)) for s in range(2000)]
        assert min(counts) == 3 and max(counts) == 10

    def test_deterministic(self):
        assert sample_note_sequence(77) == sample_note_sequence(77)
        assert sample_note_sequence(77) != sample_note_sequence(78)

    def test_pitch_class_uniformity(self):
        pcs = [e.pitch_class for s in range(10_000) for e in sample_note_sequence(s)]
        freq = np.bincount(pcs, minlength=12) / len(pcs)
        assert np.all(np.abs(freq - 1 / 12) <= 0.02 / 12)

    def test_ranges_and_ordering(self):
        for s in range(500):
            ev = sample_note_sequence(s)
            assert ev[0].onset >= 0
            for a, b in zip(ev, ev[1:]):
                gap = b.onset - a.end
                assert -1e-12 <= gap <= 0.2 + 1e-12
            for e in ev:
                assert 0.2 <= e.duration <= 1.0
                assert 0.3 <= e.velocity <= 1.0
                assert 0 <= e.pitch_class < 12


class TestSynthesis:
    def test_pitch_table(self):
        assert pitch_frequency(9) == 440.0
        assert pitch_frequency(0) == pytest.approx(261.626, abs=1e-3)

    def test_c4_peak(self):
        sig = synthesize_clip([NoteEvent(0, 0.0, 1.0, 1.0)])
        x = sig.samples.astype(np.float64)
        spec = np.abs(np.fft.rfft(x))
        bin_hz = sig.sample_rate / x.size
        assert abs(np.argmax(spec) * bin_hz - 261.626) <= bin_hz

    def test_empty_is_silent(self):
        sig = synthesize_clip([])
        assert not np.any(sig.samples)

    def test_velocity_scales_rms(self):
        rms = [np.sqrt(np.mean(synthesize_clip([NoteEvent(4, 0.05, 0.6, v)], normalize=False)
                               .samples.astype(np.float64) ** 2)) for v in (0.5, 1.0)]
        assert rms[1] / rms[0] == pytest.approx(2.0, rel=0.01)

    def test_peak_normalized(self):
        x = synthesize_clip(sample_note_sequence(3)).samples
        assert np.max(np.abs(x)) == pytest.approx(0.9, abs=1e-6)

    def test_sample_rate_too_low(self):
        with pytest.raises(ValueError):
            synthesize_clip([NoteEvent(0, 0.0, 0.5, 1.0)], sample_rate=200)

    def test_harmonics_stay_below_nyquist(self):
        x = synthesize_clip([NoteEvent(11, 0.0, 1.0, 1.0)], sample_rate=2000).samples
        spec = np.abs(np.fft.rfft(x.astype(np.float64)))
        assert np.all(np.isfinite(spec))


class TestLabels:
    def test_whole_clip_note(self):
        n = 32000
        grid = events_to_labelgrid([NoteEvent(5, 0.0, n / 16000, 1.0)], n)
        assert np.all(grid.frames[:, 5] == 1) and grid.frames.sum() == grid.frames.shape[0]
        assert grid.frame_rate == 16000 / 512

    def test_silence(self):
        assert not events_to_labelgrid([], 20000).frames.any()

    def test_half_open_boundaries(self):
        c1 = (512 + 512) / 16000  # centre of frame 1
        on = events_to_labelgrid([NoteEvent(2, c1, 0.5, 1.0)], 30000).frames[:, 2]
        assert on[1] == 1 and on[0] == 0
        off = events_to_labelgrid([NoteEvent(2, 0.0, c1, 1.0)], 30000).frames[:, 2]
        assert off[0] == 1 and off[1] == 0

    def test_monophonic(self):
        for s in range(300):
            ev = sample_note_sequence(s)
            g = events_to_labelgrid(ev, int(np.ceil((ev[-1].end + 0.1) * 16000)))
            assert g.frames.sum(axis=1).max() <= 1

    def test_csv_roundtrip(self, tmp_path):
        ev = sample_note_sequence(9)
        g = events_to_labelgrid(ev, 60000)
        g.to_csv(tmp_path / "l.csv")
        back = LabelGrid.from_csv(tmp_path / "l.csv", g.frame_rate)
        np.testing.assert_array_equal(back.frames, g.frames)
        assert (tmp_path / "l.csv").read_text().splitlines()[0] == "frame_index,pitch_class"

    def test_label_audio_consistency(self):
        W, S = ENV.pool_window, ENV.pool_stride
        for s in range(150):
            ev = sample_note_sequence(s)
            x = synthesize_clip(ev).samples.astype(np.float64)
            lab = events_to_labelgrid(ev, x.size).frames.any(axis=1)
            F = lab.size
            rms = np.array([np.sqrt(np.mean(x[f * S:f * S + W] ** 2)) for f in range(F)])
            start, stop = np.arange(F) * S / 16000, (np.arange(F) * S + W) / 16000
            touches = np.zeros(F, bool)
            for e in ev:
                touches |= (start < e.end) & (stop > e.onset)
            gap = ~lab & ~touches
            assert rms[lab].min() > 0
            if gap.any():
                assert rms[lab].min() >= 10 * rms[gap].max()


class TestWav:
    def test_roundtrip(self, tmp_path, rng):
        x = rng.uniform(-1, 1, 5000).astype(np.float32)
        wav_write(tmp_path / "a.wav", AudioSignal(x, 22050))
        back = wav_read(tmp_path / "a.wav")
        assert back.sample_rate == 22050
        assert np.max(np.abs(back.samples.astype(np.float64) - x)) <= 1 / 32768

    def test_stereo_rejected(self, tmp_path):
        with wave.open(str(tmp_path / "s.wav"), "wb") as wf:
            wf.setnchannels(2)
            wf.setsampwidth(2)
            wf.setframerate(16000)
            wf.writeframes(b"\0" * 400)
        with pytest.raises(WavFormatError, match="mono"):
            wav_read(tmp_path / "s.wav")

    def test_8bit_rejected(self, tmp_path):
        with wave.open(str(tmp_path / "b.wav"), "wb") as wf:
            wf.setnchannels(1)
            wf.setsampwidth(1)
            wf.setframerate(8000)
            wf.writeframes(b"\x80" * 100)
        with pytest.raises(WavFormatError, match="16-bit"):
            wav_read(tmp_path / "b.wav")

    def test_truncated(self, tmp_path, rng):
        wav_write(tmp_path / "t.wav", AudioSignal(rng.uniform(-1, 1, 4000), 16000))
        data = (tmp_path / "t.wav").read_bytes()
        (tmp_path / "t.wav").write_bytes(data[:-1001])
        with pytest.raises(WavFormatError, match="truncated"):
            wav_read(tmp_path / "t.wav")

    def test_garbage_header(self, tmp_path):
        (tmp_path / "g.wav").write_bytes(b"NOTAWAVE" * 10)
        with pytest.raises(WavFormatError):
            wav_read(tmp_path / "g.wav")


class TestDataset:
    COUNTS = {"train": 6, "valid": 2, "test": 2}

    def test_generate_and_load(self, tmp_path):
        ms = generate_dataset(tmp_path, seed=3, counts=self.COUNTS)
        for split, n in self.COUNTS.items():
            m = DatasetManifest.read(manifest_path(tmp_path, split))
            assert len(m.clips) == n and m.split == split
            loaded = load_split(m)
            for pcm, lab, clip in zip(loaded.audio, loaded.labels, m.clips):
                assert pcm.dtype == np.int16 and pcm.size == clip["n_samples"]
                assert lab.shape == (ENV.n_frames(pcm.size), 12)
                ev = sample_note_sequence(clip["seed"])
                np.testing.assert_array_equal(lab, events_to_labelgrid(ev, pcm.size).frames)
        assert ms["train"].synthesis["base_seed"] == 3

    def test_splits_disjoint(self):
        seeds = {sp: {clip_seed(0, sp, i) for i in range(2000)} for sp in ("train", "valid", "test")}
        assert not (seeds["train"] & seeds["valid"]) and not (seeds["valid"] & seeds["test"])
        assert not (seeds["train"] & seeds["test"])

    def test_byte_identical_regeneration(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        generate_dataset(a, seed=1, counts=self.COUNTS)
        generate_dataset(b, seed=1, counts=self.COUNTS, jobs=2)
        files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
        assert files == sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
        for f in files:
            assert (a / f).read_bytes() == (b / f).read_bytes(), f

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            DatasetManifest.read(tmp_path / "nope.yaml")

    def test_bad_counts(self, tmp_path):
        with pytest.raises(ValueError):
            generate_dataset(tmp_path, counts={"train": 0})
        with pytest.raises(ValueError):
            generate_dataset(tmp_path, counts={"bogus": 1})

    def test_manifest_echoes_parameters(self, tmp_path):
        generate_dataset(tmp_path, counts={"valid": 1})
        text = manifest_path(tmp_path, "valid").read_text()
        for key in SYNTH_DEFAULTS:
            assert key in text

    def test_pcm_scaling(self):
        np.testing.assert_allclose(pcm_to_float(np.array([32767, -32767, 0], np.int16)),
                                   [1.0, -1.0, 0.0])
