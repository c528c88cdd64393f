"""Run configuration stored as an INI file with sections.

Precedence: built-in defaults, then the config file, then command-line
overrides. Every output written by the CLI records :meth:`RunConfig.hash`.
"""

import configparser
import hashlib
import io
from dataclasses import dataclass, fields, replace

# (section, type) for every key; None-able keys accept "none"
_LAYOUT = {
    "seed": ("run", int),
    "n": ("data", int), "m": ("data", int), "s_train": ("data", int), "s_test": ("data", int),
    "noise_std": ("data", float), "dataset": ("data", str),
    "N": ("model", int), "L": ("model", int), "mu": ("model", float),
    "schedule": ("model", str), "alpha": ("model", float), "beta": ("model", float),
    "L_tilde": ("model", float), "B_out": ("model", str), "eps": ("model", str),
    "operator": ("model", str),
    "init": ("init", str), "init_a": ("init", float), "init_b": ("init", float),
    "lr": ("train", float), "batch": ("train", int), "patience": ("train", int),
    "max_epochs": ("train", int), "lambda_cap": ("train", float),
    "acf_operator": ("acf", str), "acf_iters": ("acf", int),
    "delta": ("bounds", float), "lam": ("bounds", float),
    "sweep_N": ("bounds", str), "sweep_L": ("bounds", str), "sweep_s": ("bounds", str),
    "verify_trials": ("verify", int),
    "out": ("paths", str),
}
_OPTIONAL = {"dataset", "lambda_cap", "lam", "sweep_N", "sweep_L", "sweep_s", "out"}


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    n: int = 100
    m: int = 25
    s_train: int = 2000
    s_test: int = 500
    noise_std: float = 1e-4
    dataset: str = None
    N: int = 500
    L: int = 10
    mu: float = 100.0
    schedule: str = "geometric"
    alpha: float = 0.9
    beta: float = 0.9
    L_tilde: float = 1000.0
    B_out: str = "auto"
    eps: str = "auto"
    operator: str = "learnable"
    init: str = "normal"
    init_a: float = 2.0
    init_b: float = 2.0
    lr: float = 1e-4
    batch: int = 128
    patience: int = 10
    max_epochs: int = 200
    lambda_cap: float = None
    acf_operator: str = "haar"
    acf_iters: int = 10
    delta: float = 0.05
    lam: float = None
    sweep_N: str = None
    sweep_L: str = None
    sweep_s: str = None
    verify_trials: int = 50
    out: str = None

    def __post_init__(self):
        for name in ("n", "m", "N", "L", "s_train", "s_test", "batch", "max_epochs", "acf_iters"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.m >= self.n:
            raise ValueError(f"need m < n for compressed sensing, got m={self.m}, n={self.n}")
        if self.operator != "finite_difference" and self.N <= self.n:
            raise ValueError(f"need N > n for a redundant operator, got N={self.N}, n={self.n}")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.schedule not in ("geometric", "acf", "constant"):
            raise ValueError(f"unknown schedule {self.schedule!r}")

    def with_overrides(self, **kw):
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw) if kw else self

    def to_ini(self):
        cp = configparser.ConfigParser()
        cp.optionxform = str
        for f in fields(self):
            section = _LAYOUT[f.name][0]
            if not cp.has_section(section):
                cp.add_section(section)
            val = getattr(self, f.name)
            cp.set(section, f.name, "none" if val is None else repr(val) if isinstance(val, float) else str(val))
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text):
        cp = configparser.ConfigParser()
        cp.optionxform = str
        cp.read_string(text)
        kw = {}
        for section in cp.sections():
            for key, raw in cp.items(section):
                if key not in _LAYOUT:
                    raise ValueError(f"unknown config key {section}.{key}")
                want, typ = _LAYOUT[key]
                if want != section:
                    raise ValueError(f"key {key!r} belongs in section [{want}], found in [{section}]")
                kw[key] = parse_value(key, raw)
        return cls(**kw)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_ini(fh.read())

    def hash(self):
        """Digest of every setting except the output location."""
        return hashlib.sha256(replace(self, out=None).to_ini().encode()).hexdigest()[:16]


def parse_value(key, raw):
    if key not in _LAYOUT:
        raise ValueError(f"unknown config key {key!r}")
    typ = _LAYOUT[key][1]
    raw = raw.strip()
    if raw.lower() == "none":
        if key not in _OPTIONAL:
            raise ValueError(f"{key} may not be none")
        return None
    try:
        return typ(raw)
    except ValueError:
        raise ValueError(f"bad value for {key}: {raw!r}") from None


def int_list(text):
    return [int(v) for v in text.replace(",", " ").split()] if text else []
