import os
from dataclasses import dataclass, field


ENV_KEYS = (
    "MGEQ_S_BASE", "MGEQ_V_BASE", "MGEQ_F_NOM",
    "MGEQ_DT_INT", "MGEQ_METHOD", "MGEQ_ANCHOR", "MGEQ_DIVERGENCE_LIMIT",
    "MGEQ_REL_STEP", "MGEQ_PENALTY", "MGEQ_TARGET_EPS", "MGEQ_SEED", "MGEQ_PROGRESS_EVERY",
    "MGEQ_THRESHOLD",
    "LOG_FILE", "LOG_LEVEL",
)


def env_file_path():
    """<project root>/.env, or MGEQ_ENV_FILE when set."""
    # core/config.py -> core -> app -> project root
    project_dir = os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
    return os.environ.get("MGEQ_ENV_FILE", os.path.join(project_dir, ".env"))


def load_env(path=None):
    """
    Copy KEY=VALUE lines of the .env file into os.environ without overriding
    variables already set. Only the toolkit's own keys are accepted; a
    misspelt MGEQ_ key fails here instead of being silently ignored.
    Returns the keys that were applied.
    """
    path = env_file_path() if path is None else path
    applied = []
    if not os.path.exists(path):
        return applied
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith('#') or '=' not in line:
                continue
            key, value = line.split('=', 1)
            key = key.strip()
            value = value.strip().strip('"\'')
            if key not in ENV_KEYS:
                if key.startswith("MGEQ_"):
                    raise ValueError(f"{path} line {lineno}: unknown setting {key}")
                continue
            if key not in os.environ and value:
                os.environ[key] = value
                applied.append(key)
    return applied


load_env()


def get_env(name, default=None):
    return os.getenv(name, default)

def get_bool_env(name, default="false"):
    return get_env(name, default).lower() in ("1", "true", "yes")

@dataclass
class Settings:
    # --- Per-unit base ---
    s_base: float = field(default_factory=lambda: float(get_env("MGEQ_S_BASE", "10.0")))
    v_base: float = field(default_factory=lambda: float(get_env("MGEQ_V_BASE", "13.8")))
    f_nom: float = field(default_factory=lambda: float(get_env("MGEQ_F_NOM", "60.0")))

    # --- Play-in simulation ---
    dt_int: float = field(default_factory=lambda: float(get_env("MGEQ_DT_INT", "0.001")))
    method: str = field(default_factory=lambda: get_env("MGEQ_METHOD", "rk4"))
    anchor: bool = field(default_factory=lambda: get_bool_env("MGEQ_ANCHOR", "true"))
    divergence_limit: float = field(default_factory=lambda: float(get_env("MGEQ_DIVERGENCE_LIMIT", "1e6")))

    # --- Sensitivity / estimation ---
    rel_step: float = field(default_factory=lambda: float(get_env("MGEQ_REL_STEP", "0.01")))
    penalty: float = field(default_factory=lambda: float(get_env("MGEQ_PENALTY", "1e6")))
    target_eps: float = field(default_factory=lambda: float(get_env("MGEQ_TARGET_EPS", "1e-8")))
    seed: int = field(default_factory=lambda: int(get_env("MGEQ_SEED", "0")))
    progress_every: int = field(default_factory=lambda: int(get_env("MGEQ_PROGRESS_EVERY", "25")))

    # --- Validation ---
    threshold: float = field(default_factory=lambda: float(get_env("MGEQ_THRESHOLD", "0.05")))

    # --- Logging ---
    log_file: str = field(default_factory=lambda: get_env("LOG_FILE"))
    log_level: str = field(default_factory=lambda: get_env("LOG_LEVEL", "INFO"))

    def __post_init__(self):
        for name in ("s_base", "v_base", "f_nom", "dt_int"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")
        self.method = self.method.lower()
        if self.method not in ("rk4", "trapezoidal"):
            raise ValueError(f"Unknown integration method: {self.method}")
        if not 0.0 < self.rel_step <= 0.1:
            raise ValueError(f"rel_step must be in (0, 0.1], got {self.rel_step}")
        if self.divergence_limit <= 0 or self.penalty <= 0:
            raise ValueError("divergence_limit and penalty must be strictly positive")
        if self.threshold < 0 or self.target_eps < 0 or self.progress_every < 0:
            raise ValueError("threshold, target_eps and progress_every must be >= 0")


# Instantiate Singleton
try:
    settings = Settings()
except Exception as e:
    print(f"FAILED TO LOAD CONFIG: {e}")
    raise e


# Explicitly exporting 'settings'
__all__ = ["settings", "Settings", "load_env", "ENV_KEYS"]
