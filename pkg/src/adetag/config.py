"""Run configuration: model geometry, ablations, and optimizer settings.

Configs load from a flat ``key = value`` text file (``#`` comments allowed);
unknown keys are rejected so typos fail loudly. CLI flags override file
values, file values override defaults.
"""

from dataclasses import dataclass, field, fields


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    # model geometry (paper-scale defaults)
    word_dim: int = 200            # per embedding instance; word feature is 2x
    char_dim: int = 25
    char_widths: tuple = (1, 2, 3, 4, 5, 6)
    pos_dim: int = 25
    label_dim: int = 25
    hidden_dim: int = 150          # per direction; encoded state is 2x
    context_dim: int = 300         # output width of the entity->ADE projection
    # ablation flags
    attention: bool = True
    char: bool = True
    pos: bool = True
    teacher_forcing: bool = False
    drug_word_only: bool = False   # zero out char/PoS segments of drug tokens
    # optimization
    learning_rate: float = 0.001
    batch_size: int = 16
    max_epochs: int = 10
    dropout_rate: float = 0.5
    init_low: float = -0.01
    init_high: float = 0.01
    seed: int = 13
    adagrad_epsilon: float = 1e-8
    patience: int = 0              # 0 = fixed epoch budget, no early stop
    ade_loss_weight: float = 1.0
    embeddings_path: str = ""      # optional pretrained word vectors (text word2vec)
    allow_random_embeddings: bool = True
    workers: int = 1

    def __post_init__(self):
        self.char_widths = tuple(int(w) for w in self.char_widths)
        self.validate()

    def validate(self):
        if self.learning_rate <= 0 or self.batch_size <= 0 or self.max_epochs <= 0:
            raise ConfigError("learning_rate, batch_size and max_epochs must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate {self.dropout_rate} outside [0, 1)")
        if self.init_low != -self.init_high:
            raise ConfigError(f"init range ({self.init_low}, {self.init_high}) must be symmetric")
        if self.adagrad_epsilon <= 0:
            raise ConfigError("adagrad_epsilon must be positive")
        if not self.char_widths or any(w < 1 for w in self.char_widths):
            raise ConfigError(f"bad char_widths {self.char_widths}")
        if min(self.word_dim, self.char_dim, self.pos_dim, self.label_dim,
               self.hidden_dim, self.context_dim) < 1:
            raise ConfigError("all dimensions must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    # derived geometry -----------------------------------------------------
    @property
    def word_feature_dim(self):
        return 2 * self.word_dim

    @property
    def char_feature_dim(self):
        return sum(self.char_dim * w for w in self.char_widths)

    @property
    def token_feature_dim(self):
        dim = self.word_feature_dim
        if self.char:
            dim += self.char_feature_dim
        if self.pos:
            dim += self.pos_dim
        return dim

    @property
    def state_dim(self):
        return 2 * self.hidden_dim

    def to_dict(self):
        d = {}
        for f in fields(self):
            v = getattr(self, f.name)
            d[f.name] = list(v) if isinstance(v, tuple) else v
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**d)


def _coerce(key, raw, target_type):
    raw = raw.strip()
    try:
        if target_type is bool:
            low = raw.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if target_type is int:
            return int(raw)
        if target_type is float:
            return float(raw)
        if target_type is tuple:
            return tuple(int(p) for p in raw.replace("[", "").replace("]", "").split(",") if p.strip())
        return raw.strip("\"'")
    except ValueError:
        raise ConfigError(f"cannot parse value {raw!r} for key {key!r}") from None


def parse_overrides(pairs):
    """Parse repeated KEY=VALUE strings (CLI --set) into a dict."""
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not KEY=VALUE")
        key, raw = pair.split("=", 1)
        out[key.strip()] = raw
    return out


def load_config(path=None, overrides=None):
    """Build a TrainConfig from an optional file plus raw string overrides."""
    types = {f.name: (tuple if f.name == "char_widths" else type(f.default))
             for f in fields(TrainConfig)}
    raw = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
                key, val = (part.strip() for part in line.split("=", 1))
                raw[key] = val
    for key, val in (overrides or {}).items():
        raw[key] = val

    unknown = set(raw) - set(types)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    values = {key: _coerce(key, val, types[key]) for key, val in raw.items()}
    return TrainConfig(**values)


def write_config(config, path):
    with open(path, "w", encoding="utf-8") as fh:
        for key, val in config.to_dict().items():
            if isinstance(val, list):
                val = ",".join(str(v) for v in val)
            fh.write(f"{key} = {val}\n")
