"""Audio decoding, resampling, label manifests and the synthetic corpus."""

import os
import struct
from dataclasses import dataclass, field
from math import gcd

import numpy as np

PIPELINE_RATE = 32000


class WavError(ValueError):
    pass


class MalformedHeaderError(WavError):
    pass


class UnsupportedEncodingError(WavError):
    pass


class TruncatedDataError(WavError):
    pass


class ManifestError(ValueError):
    pass


class UnknownClassError(ManifestError):
    pass


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int
    id: str = ""

    @property
    def duration(self):
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class WeakClipLabel:
    clip_id: str
    tags: frozenset


@dataclass(frozen=True)
class StrongEvent:
    clip_id: str
    onset: float
    offset: float
    label: str
    source: str = "ground_truth"


# --------------------------------------------------------------------- WAV

_PCM, _FLOAT, _EXTENSIBLE = 1, 3, 0xFFFE


def decode_wav(data):
    """Parse a RIFF/WAVE byte string (PCM16 or float32, mono or stereo)."""
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise MalformedHeaderError("not a RIFF/WAVE file")
    pos = 12
    fmt = None
    while pos + 8 <= len(data):
        cid = data[pos:pos + 4]
        (size,) = struct.unpack("<I", data[pos + 4:pos + 8])
        body = pos + 8
        if cid == b"fmt ":
            if size < 16 or body + size > len(data):
                raise MalformedHeaderError("fmt chunk too short")
            tag, channels, rate, _, _, bits = struct.unpack("<HHIIHH", data[body:body + 16])
            if tag == _EXTENSIBLE:
                if size < 40:
                    raise MalformedHeaderError("extensible fmt chunk too short")
                (tag,) = struct.unpack("<H", data[body + 24:body + 26])
            fmt = (tag, channels, rate, bits)
        elif cid == b"data":
            if fmt is None:
                raise MalformedHeaderError("data chunk before fmt chunk")
            if body + size > len(data):
                raise TruncatedDataError(
                    f"data chunk declares {size} bytes, only {len(data) - body} present")
            return _decode_samples(data[body:body + size], *fmt)
        pos = body + size + (size & 1)
    raise MalformedHeaderError("no data chunk" if fmt else "no fmt chunk")


def _decode_samples(raw, tag, channels, rate, bits):
    if channels not in (1, 2):
        raise UnsupportedEncodingError(f"{channels} channels (only mono/stereo supported)")
    if rate <= 0:
        raise MalformedHeaderError("sample rate must be positive")
    if tag == _PCM and bits == 16:
        x = np.frombuffer(raw[:len(raw) // 2 * 2], dtype="<i2").astype(np.float64) / 32768.0
    elif tag == _FLOAT and bits == 32:
        x = np.frombuffer(raw[:len(raw) // 4 * 4], dtype="<f4").astype(np.float64)
        if not np.all(np.isfinite(x)):
            raise WavError("non-finite float samples")
        x = np.clip(x, -1.0, 1.0)
    else:
        raise UnsupportedEncodingError(f"format tag {tag} with {bits} bits per sample")
    frames = len(x) // channels
    x = x[:frames * channels].reshape(frames, channels).mean(axis=1)
    return AudioClip(x, int(rate))


def encode_wav(clip):
    """Serialize a clip as mono 16-bit PCM."""
    pcm = np.clip(np.round(np.asarray(clip.samples) * 32768.0), -32768, 32767).astype("<i2")
    payload = pcm.tobytes()
    fmt = struct.pack("<HHIIHH", _PCM, 1, clip.sample_rate, clip.sample_rate * 2, 2, 16)
    return b"".join([
        b"RIFF", struct.pack("<I", 36 + len(payload)), b"WAVE",
        b"fmt ", struct.pack("<I", 16), fmt,
        b"data", struct.pack("<I", len(payload)), payload,
    ])


def read_wav(path):
    with open(path, "rb") as fh:
        clip = decode_wav(fh.read())
    clip.id = os.path.basename(path)
    return clip


def write_wav(clip, path):
    with open(path, "wb") as fh:
        fh.write(encode_wav(clip))


# ---------------------------------------------------------------- resample

RESAMPLE_TAPS = 64
RESAMPLE_CUTOFF = 0.95
KAISER_BETA = 8.6


def _sinc_table(frac, offs, cutoff, half):
    """Rows of unit-DC-gain windowed-sinc taps for fractional delays ``frac``."""
    dist = offs[None, :] - frac
    taps = cutoff * np.sinc(cutoff * dist)
    taps *= np.i0(KAISER_BETA * np.sqrt(np.clip(1 - (dist / half) ** 2, 0, None))) / np.i0(KAISER_BETA)
    return taps / taps.sum(axis=1, keepdims=True)


def resample(clip, target_rate):
    """Band-limited resampling with a Kaiser-windowed sinc kernel.

    Each output sample is a 64-tap dot product centred on its exact input
    position; the low-pass cutoff sits at 0.95 x Nyquist of the lower rate.
    """
    if target_rate <= 0:
        raise ValueError("target rate must be positive")
    src = clip.sample_rate
    x = np.asarray(clip.samples, dtype=np.float64)
    if target_rate == src:
        return AudioClip(x.copy(), src, clip.id)
    n_in = len(x)
    n_out = (2 * n_in * target_rate + src) // (2 * src)
    g = gcd(src, target_rate)
    up, down = target_rate // g, src // g
    cutoff = RESAMPLE_CUTOFF * min(1.0, target_rate / src)
    half = RESAMPLE_TAPS // 2
    offs = np.arange(-half + 1, half + 1)
    table = _sinc_table(np.arange(up)[:, None] / up, offs, cutoff, half) if up <= 1 << 16 else None

    out = np.empty(n_out)
    block = 1 << 14
    for start in range(0, n_out, block):
        n = np.arange(start, min(n_out, start + block))
        # exact rational input position n * down / up
        base = (n * down) // up
        phase = (n * down) % up
        if table is not None:
            taps = table[phase]
        else:
            taps = _sinc_table((phase / up)[:, None], offs, cutoff, half)
        idx = base[:, None] + offs[None, :]
        valid = (idx >= 0) & (idx < n_in)
        vals = np.where(valid, x[np.clip(idx, 0, n_in - 1)], 0.0)
        out[start:start + len(n)] = (vals * taps).sum(axis=1)
    return AudioClip(out, int(target_rate), clip.id)


# --------------------------------------------------------------- manifests

def _rows(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            fields = line.split("\t")
            if lineno == 1 and fields[0] == "filename":
                continue
            yield lineno, fields


def load_weak_manifest(path, classes=None):
    """Read ``filename<TAB>label1,label2`` rows into WeakClipLabels."""
    vocab = set(classes) if classes is not None else None
    seen = set()
    out = []
    for lineno, fields in _rows(path):
        if len(fields) < 2:
            raise ManifestError(f"{path}:{lineno}: expected filename and labels")
        name = fields[0]
        tags = [t.strip() for t in fields[1].split(",") if t.strip()]
        if not tags:
            raise ManifestError(f"{path}:{lineno}: empty tag list for {name}")
        if len(set(tags)) != len(tags):
            raise ManifestError(f"{path}:{lineno}: duplicate tag for {name}")
        if vocab is not None:
            for t in tags:
                if t not in vocab:
                    raise UnknownClassError(f"{path}:{lineno}: unknown class {t!r}")
        if name in seen:
            raise ManifestError(f"{path}:{lineno}: duplicate filename {name}")
        seen.add(name)
        out.append(WeakClipLabel(name, frozenset(tags)))
    return out


def load_strong_manifest(path, classes=None):
    """Read ``filename<TAB>onset<TAB>offset<TAB>label[<TAB>source]`` rows."""
    vocab = set(classes) if classes is not None else None
    out = []
    for lineno, fields in _rows(path):
        if len(fields) not in (4, 5):
            raise ManifestError(f"{path}:{lineno}: expected 4 or 5 fields, got {len(fields)}")
        name, on, off, label = fields[:4]
        try:
            onset, offset = float(on), float(off)
        except ValueError:
            raise ManifestError(f"{path}:{lineno}: non-numeric time") from None
        if not (np.isfinite(onset) and np.isfinite(offset)) or onset < 0:
            raise ManifestError(f"{path}:{lineno}: invalid time")
        if onset >= offset:
            raise ManifestError(f"{path}:{lineno}: zero or negative length event")
        if vocab is not None and label not in vocab:
            raise UnknownClassError(f"{path}:{lineno}: unknown class {label!r}")
        source = fields[4] if len(fields) == 5 else "ground_truth"
        out.append(StrongEvent(name, onset, offset, label, source))
    return out


def _fmt_time(t):
    # repr is the shortest string that parses back to the same float
    return repr(float(t))


def write_weak_manifest(labels, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("filename\tevent_labels\n")
        for lab in labels:
            fh.write(f"{lab.clip_id}\t{','.join(sorted(lab.tags))}\n")


def write_strong_manifest(events, path, with_source=False):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("filename\tonset\toffset\tevent_label" + ("\tsource" if with_source else "") + "\n")
        for ev in events:
            row = f"{ev.clip_id}\t{_fmt_time(ev.onset)}\t{_fmt_time(ev.offset)}\t{ev.label}"
            if with_source:
                row += f"\t{ev.source}"
            fh.write(row + "\n")


# ---------------------------------------------------------- synth corpus

@dataclass(frozen=True)
class SynthClass:
    name: str
    family: str  # "tone" | "chirp" | "am"
    f0: float


DEFAULT_CLASSES = (
    SynthClass("Tone", "tone", 500.0),
    SynthClass("Chirp", "chirp", 1400.0),
    SynthClass("Warble", "am", 4000.0),
)


@dataclass
class SynthCorpusConfig:
    n_clips: int = 10
    clip_seconds: float = 10.0
    classes: tuple = DEFAULT_CLASSES
    events_per_clip: tuple = (1, 2)
    event_seconds: tuple = (0.5, 3.0)
    snr_db: float = 20.0
    noise_rms: float = 0.01
    sample_rate: int = PIPELINE_RATE
    allow_overlap: bool = False
    seed: int = 0
    prefix: str = "clip"

    def validate(self):
        if self.n_clips < 0:
            raise ValueError("n_clips must be >= 0")
        if not np.isfinite(self.snr_db):
            raise ValueError("snr_db must be finite")
        lo, hi = self.events_per_clip
        if lo < 0 or hi < lo:
            raise ValueError("events_per_clip must satisfy 0 <= min <= max")
        f0s = [c.f0 for c in self.classes]
        if len(set(f0s)) != len(f0s):
            raise ValueError("class fundamentals must be pairwise distinct")
        if self.event_seconds[1] > self.clip_seconds:
            raise ValueError("events longer than the clip")


FADE_SECONDS = 0.010
CHIRP_SPAN = 1.5
AM_RATE_HZ = 8.0


def class_waveform(cls, n, rate, rng):
    """Unit-RMS waveform of ``n`` samples for one synthetic class."""
    t = np.arange(n) / rate
    phase0 = rng.uniform(0, 2 * np.pi)
    if cls.family == "tone":
        y = np.sin(2 * np.pi * cls.f0 * t + phase0)
    elif cls.family == "chirp":
        dur = n / rate
        k = cls.f0 * (CHIRP_SPAN - 1) / dur
        y = np.sin(2 * np.pi * (cls.f0 * t + 0.5 * k * t * t) + phase0)
    elif cls.family == "am":
        y = (1 + 0.8 * np.sin(2 * np.pi * AM_RATE_HZ * t)) * np.sin(2 * np.pi * cls.f0 * t + phase0)
    else:
        raise ValueError(f"unknown waveform family {cls.family!r}")
    return y / np.sqrt(np.mean(y * y))


def raised_cosine_gate(n, rate, fade=FADE_SECONDS):
    g = np.ones(n)
    m = min(int(round(fade * rate)), n // 2)
    if m > 0:
        ramp = 0.5 - 0.5 * np.cos(np.pi * (np.arange(m) + 0.5) / m)
        g[:m] = ramp
        g[n - m:] = ramp[::-1]
    return g


def _place_events(cfg, rng):
    lo, hi = cfg.events_per_clip
    n_events = int(rng.integers(lo, hi + 1))
    clip_ms = int(round(cfg.clip_seconds * 1000))
    dmin, dmax = (int(round(s * 1000)) for s in cfg.event_seconds)
    placed = []
    for _ in range(n_events):
        cls = cfg.classes[int(rng.integers(len(cfg.classes)))]
        for _attempt in range(100):
            dur = int(rng.integers(dmin, dmax + 1))
            on = int(rng.integers(0, clip_ms - dur + 1))
            clash = any(on < e2 and on + dur > s2 for s2, e2, c2 in placed
                        if not cfg.allow_overlap or c2 == cls)
            if not clash:
                placed.append((on, on + dur, cls))
                break
    placed.sort(key=lambda p: (p[0], p[2].name))
    return placed


def synth_clip(cfg, index):
    """Render clip ``index``; returns (AudioClip, list of StrongEvent)."""
    rng = np.random.Generator(np.random.PCG64([cfg.seed, index]))
    rate = cfg.sample_rate
    n = int(round(cfg.clip_seconds * rate))
    name = f"{cfg.prefix}_{index:05d}.wav"
    x = rng.standard_normal(n) * cfg.noise_rms
    amp = cfg.noise_rms * 10 ** (cfg.snr_db / 20)
    events = []
    for on_ms, off_ms, cls in _place_events(cfg, rng):
        a, b = on_ms * rate // 1000, off_ms * rate // 1000
        x[a:b] += amp * class_waveform(cls, b - a, rate, rng) * raised_cosine_gate(b - a, rate)
        events.append(StrongEvent(name, on_ms / 1000, off_ms / 1000, cls.name))
    return AudioClip(np.clip(x, -1.0, 1.0), rate, name), events


def generate_synth_corpus(config, out_dir):
    """Write ``audio/*.wav``, ``strong.tsv`` and ``weak.tsv`` under ``out_dir``.

    Output is a pure function of the config (including its seed).
    """
    config.validate()
    audio_dir = os.path.join(out_dir, "audio")
    os.makedirs(audio_dir, exist_ok=True)
    strong, weak, names = [], [], []
    for i in range(config.n_clips):
        clip, events = synth_clip(config, i)
        write_wav(clip, os.path.join(audio_dir, clip.id))
        names.append(clip.id)
        strong.extend(events)
        if events:
            weak.append(WeakClipLabel(clip.id, frozenset(e.label for e in events)))
    write_strong_manifest(strong, os.path.join(out_dir, "strong.tsv"))
    write_weak_manifest(weak, os.path.join(out_dir, "weak.tsv"))
    return SynthCorpus(out_dir, names, strong, weak)


@dataclass
class SynthCorpus:
    root: str
    clip_names: list = field(default_factory=list)
    strong: list = field(default_factory=list)
    weak: list = field(default_factory=list)
