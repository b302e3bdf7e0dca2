"""Experiment configuration.

Config files are flat UTF-8 ``section.key = value`` lines ('#' comments).
Unknown keys are rejected and every offending key is reported at once.
Defaults are the method's published operating point: 25/15 ms frames,
128 mel bins, lr 0.001, weight decay 0.0005, 100 epochs, logit scale 16,
5-way 5-shot episodes, 100 repeated runs.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .audio import FrontendConfig, SynthConfig, patch_counts
from .encoder import EncoderConfig
from .errors import ConfigError, IngestionError


@dataclass(frozen=True)
class PatchConfig:
    s_f: int = 16
    s_t: int = 16
    stride: int = 16


@dataclass(frozen=True)
class EncoderSection:
    blocks: int = 2
    dim: int = 32
    heads: int = 4
    mlp_hidden: int = 64
    fusion_hidden: int = 32
    use_fusion: bool = True


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    weight_decay: float = 0.0005
    epochs: int = 100
    eta: float = 16.0  # cosine-softmax logit scale


@dataclass(frozen=True)
class ClassifierConfig:
    kind: str = "rrc"  # rrc | pbc
    lam: str = "cv"  # "cv" or a nonnegative float literal
    lam_grid: tuple = (1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0, 1000.0)
    cv_folds: int = 5
    relambda_each_session: bool = False

    def fixed_lam(self) -> float | None:
        return None if self.lam == "cv" else float(self.lam)


@dataclass(frozen=True)
class PlanConfig:
    base_classes: int = 5
    inc_classes: int = 5
    sessions: int = 1  # incremental session count M
    shots: int = 5  # K, per class per session


@dataclass(frozen=True)
class SynthSection:
    num_classes: int = 10
    clips_per_class: int = 25
    train_per_class: int = 15
    base_freq_hz: float = 220.0
    max_freq_hz: float = 4000.0
    noise_amplitude: float = 0.02


@dataclass(frozen=True)
class DataConfig:
    source: str = "synth"  # synth | manifest
    manifest: str = ""


@dataclass(frozen=True)
class RunConfig:
    seed: int = 7
    repeats: int = 100
    threads: int = 1


@dataclass(frozen=True)
class ExperimentConfig:
    frontend: FrontendConfig = field(default_factory=FrontendConfig)
    patch: PatchConfig = field(default_factory=PatchConfig)
    encoder: EncoderSection = field(default_factory=EncoderSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    plan: PlanConfig = field(default_factory=PlanConfig)
    synth: SynthSection = field(default_factory=SynthSection)
    data: DataConfig = field(default_factory=DataConfig)
    run: RunConfig = field(default_factory=RunConfig)

    def lms_frames(self) -> int:
        return 1 + (self.frontend.clip_samples - self.frontend.frame_len) // self.frontend.frame_shift

    def encoder_config(self) -> EncoderConfig:
        """Full encoder config with the patch-budget fields derived from
        the frontend geometry (fixed clip length -> fixed patch count)."""
        grid = patch_counts(
            self.frontend.mel_bins, self.lms_frames(),
            self.patch.s_f, self.patch.s_t, self.patch.stride,
        )
        return EncoderConfig(
            blocks=self.encoder.blocks,
            dim=self.encoder.dim,
            heads=self.encoder.heads,
            mlp_hidden=self.encoder.mlp_hidden,
            fusion_hidden=self.encoder.fusion_hidden,
            z_max=grid.z,
            patch_dim=self.patch.s_f * self.patch.s_t,
            use_fusion=self.encoder.use_fusion,
        )

    def synth_signal_config(self) -> SynthConfig:
        return SynthConfig(
            num_classes=self.synth.num_classes,
            sample_rate_hz=self.frontend.sample_rate_hz,
            clip_seconds=self.frontend.clip_seconds,
            base_freq_hz=self.synth.base_freq_hz,
            max_freq_hz=self.synth.max_freq_hz,
            noise_amplitude=self.synth.noise_amplitude,
        )

    def to_flat_dict(self) -> dict[str, str]:
        out: dict[str, str] = {}
        for section_name, _ in _SECTIONS:
            section = getattr(self, section_name)
            for f in dataclasses.fields(section):
                key = _field_to_key(section_name, f.name)
                value = getattr(section, f.name)
                if isinstance(value, tuple):
                    out[key] = ",".join(repr(v) for v in value)
                elif isinstance(value, bool):
                    out[key] = "true" if value else "false"
                else:
                    out[key] = str(value)
        return out


_SECTIONS = (
    ("frontend", FrontendConfig),
    ("patch", PatchConfig),
    ("encoder", EncoderSection),
    ("train", TrainConfig),
    ("classifier", ClassifierConfig),
    ("plan", PlanConfig),
    ("synth", SynthSection),
    ("data", DataConfig),
    ("run", RunConfig),
)

# config-file spelling -> dataclass field, where they differ
_KEY_ALIASES = {"classifier.lambda": ("classifier", "lam")}
_FIELD_ALIASES = {("classifier", "lam"): "classifier.lambda"}

_TRUE = {"true", "on", "yes", "1"}
_FALSE = {"false", "off", "no", "0"}


def _field_to_key(section: str, field_name: str) -> str:
    return _FIELD_ALIASES.get((section, field_name), f"{section}.{field_name}")


def _known_fields() -> dict[str, tuple[str, dataclasses.Field]]:
    known = {}
    for section_name, cls in _SECTIONS:
        for f in dataclasses.fields(cls):
            known[_field_to_key(section_name, f.name)] = (section_name, f)
    return known


def _parse_value(key: str, raw: str, f: dataclasses.Field):
    kind = f.type if isinstance(f.type, str) else f.type.__name__
    if key == "classifier.lambda":
        if raw == "cv":
            return "cv"
        v = float(raw)  # may raise ValueError
        if v < 0:
            raise ValueError("lambda must be >= 0 or 'cv'")
        return repr(v)  # stored as str; fixed_lam() parses it back
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    if kind == "bool":
        low = raw.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if kind == "tuple":
        return tuple(float(x) for x in raw.split(",") if x.strip())
    return raw


def parse_config_text(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Parse flat key=value lines over the defaults (or ``base``)."""
    base = base or ExperimentConfig()
    known = _known_fields()
    overrides: dict[str, dict[str, object]] = {}
    problems: list[str] = []
    for ln, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            problems.append(f"line {ln}: expected key = value, got {stripped!r}")
            continue
        key, _, raw = stripped.partition("=")
        key, raw = key.strip(), raw.strip()
        if key not in known:
            problems.append(f"line {ln}: unknown key {key!r}")
            continue
        section_name, f = known[key]
        try:
            value = _parse_value(key, raw, f)
        except ValueError as e:
            problems.append(f"line {ln}: bad value for {key}: {e}")
            continue
        overrides.setdefault(section_name, {})[f.name] = value
    if problems:
        raise ConfigError("invalid config:\n  " + "\n  ".join(problems))
    sections = {
        name: dataclasses.replace(getattr(base, name), **overrides.get(name, {}))
        for name, _ in _SECTIONS
    }
    cfg = ExperimentConfig(**sections)
    validate_config(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"{path}: no such config file")
    return parse_config_text(path.read_text(encoding="utf-8"))


def validate_config(cfg: ExperimentConfig) -> None:
    """Range checks across every section; all offenders reported at once."""
    bad: list[str] = []

    def check(ok: bool, key: str, why: str):
        if not ok:
            bad.append(f"{key}: {why}")

    fe = cfg.frontend
    check(fe.sample_rate_hz > 0, "frontend.sample_rate_hz", "must be positive")
    check(fe.frame_ms > 0 and fe.shift_ms > 0, "frontend.frame_ms/shift_ms", "must be positive")
    check(fe.mel_bins >= 1, "frontend.mel_bins", "must be >= 1")
    check(fe.fft_size >= fe.frame_len, "frontend.fft_size", f"must be >= frame length {fe.frame_len}")
    check(0 <= fe.fmin_hz < fe.fmax_hz <= fe.sample_rate_hz / 2, "frontend.fmin_hz/fmax_hz",
          "need 0 <= fmin < fmax <= nyquist")
    check(fe.log_floor > 0, "frontend.log_floor", "must be positive")
    check(fe.clip_samples >= fe.frame_len, "frontend.clip_seconds",
          "clip must be at least one frame long")

    pa = cfg.patch
    check(pa.stride >= 1, "patch.stride", "must be >= 1")
    check(1 <= pa.s_f <= fe.mel_bins, "patch.s_f", f"must be in [1, {fe.mel_bins}]")
    frames = cfg.lms_frames() if fe.clip_samples >= fe.frame_len else 0
    check(1 <= pa.s_t <= max(frames, 1), "patch.s_t", f"must be in [1, {frames}]")

    en = cfg.encoder
    check(en.blocks >= 1, "encoder.blocks", "must be >= 1")
    for name in ("dim", "heads", "mlp_hidden", "fusion_hidden"):
        check(getattr(en, name) >= 1, f"encoder.{name}", "must be >= 1")
    check(en.heads >= 1 and en.dim % max(en.heads, 1) == 0, "encoder.dim",
          f"must be divisible by encoder.heads ({en.heads})")

    tr = cfg.train
    check(tr.learning_rate > 0, "train.learning_rate", "must be > 0")
    check(tr.weight_decay >= 0, "train.weight_decay", "must be >= 0")
    check(tr.epochs >= 0, "train.epochs", "must be >= 0")
    check(tr.eta > 0, "train.eta", "must be > 0")

    cl = cfg.classifier
    check(cl.kind in ("rrc", "pbc"), "classifier.kind", "must be rrc or pbc")
    check(len(cl.lam_grid) > 0, "classifier.lam_grid", "must be nonempty")
    check(all(g >= 0 for g in cl.lam_grid), "classifier.lam_grid", "entries must be >= 0")
    check(cl.cv_folds >= 2, "classifier.cv_folds", "must be >= 2")

    pl = cfg.plan
    check(pl.base_classes >= 1, "plan.base_classes", "must be >= 1")
    check(pl.inc_classes >= 1 or pl.sessions == 0, "plan.inc_classes", "must be >= 1")
    check(pl.sessions >= 0, "plan.sessions", "must be >= 0")
    check(pl.shots >= 1, "plan.shots", "must be >= 1")

    sy = cfg.synth
    check(sy.num_classes >= 1, "synth.num_classes", "must be >= 1")
    check(sy.clips_per_class >= 2, "synth.clips_per_class", "must be >= 2 (train + test)")
    check(1 <= sy.train_per_class < sy.clips_per_class, "synth.train_per_class",
          "must leave at least one test clip")
    check(0 < sy.base_freq_hz < sy.max_freq_hz <= fe.sample_rate_hz / 2,
          "synth.base_freq_hz/max_freq_hz", "need 0 < base < max <= nyquist")
    check(sy.noise_amplitude >= 0, "synth.noise_amplitude", "must be >= 0")

    da = cfg.data
    check(da.source in ("synth", "manifest"), "data.source", "must be synth or manifest")
    if da.source == "manifest":
        check(bool(da.manifest), "data.manifest", "required when data.source = manifest")

    ru = cfg.run
    check(ru.repeats >= 1, "run.repeats", "must be >= 1")
    check(ru.threads >= 1, "run.threads", "must be >= 1")

    if bad:
        raise ConfigError("invalid config:\n  " + "\n  ".join(bad))


def default_config() -> ExperimentConfig:
    return ExperimentConfig()


def ast_base_config() -> EncoderConfig:
    """Full-scale encoder preset mirroring a base-size audio spectrogram
    transformer: 12 blocks, width 768, 12 heads, MLP 3072, 16x16 patches
    at stride 10 over a 128 x 1024 spectrogram (1212 patches). The fusion
    MLP stays narrow so its overhead is <1% of the encoder."""
    return EncoderConfig(
        blocks=12,
        dim=768,
        heads=12,
        mlp_hidden=3072,
        fusion_hidden=64,
        z_max=patch_counts(128, 1024, 16, 16, 10).z,
        patch_dim=256,
        use_fusion=True,
    )
