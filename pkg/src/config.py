"""Configuration management for the Ge'ez MT toolkit pipeline."""

import os
from pathlib import Path
from typing import Any, Dict, List, Optional
import yaml


class ConfigurationError(Exception):
    """Raised when configuration is invalid."""
    pass


VALID_OVERLAP_MODES = ["strict", "source-source"]
VALID_BACKEND_MODES = ["simulated", "http", "bedrock"]
VALID_LOG_LEVELS = ["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]
VALID_POOL_SPLITS = ["train", "test", "validation"]
VALID_EMBEDDERS = ["char-ngram-tfidf", "http"]

DEFAULT_SEED = 20230401

# Only ever read from the environment.
API_KEY_ENV_VAR = "COMPLETION_API_KEY"


class Config:
    """Manages pipeline configuration from YAML files and environment variables.

    Environment variables take precedence over YAML configuration.
    Supports default values for all settings.
    """

    # Default configuration values
    DEFAULTS = {
        "corpus": {
            "data_dir": "data/raw",
            "directions": [],
        },
        "split": {
            "ratios": {"train": 0.7, "test": 0.2, "validation": 0.1},
            "seed": DEFAULT_SEED,
            "overlap_mode": "strict",
            "tolerance": 0.02,
            "min_domain_size": 3,
        },
        "bpe": {
            "vocab_size": 8000,
            "model_path": "bpe/shared.model",
            "joint": True,
            "min_frequency": 1,
        },
        "fuzzy": {
            "direction": None,
            "max_matches": 10,
            "pool_split": "train",
            "embedder": "char-ngram-tfidf",
            "embedding_endpoint": None,
            "embedding_model": None,
        },
        "backend": {
            "mode": "simulated",
            "endpoint": "http://127.0.0.1:8080/v1/completions",
            "model": "text-davinci-003",
            "region": "us-east-1",
            "top_p": 1.0,
            "temperature": 0.3,
            "length_multiplier": 5.0,
            "timeout": 30,
            "concurrency": 2,
        },
        "processing": {
            "retry_attempts": 3,
            "retry_delay": 2,
        },
        "output": {
            "out_dir": "output",
        },
        "logging": {
            "level": "INFO",
            "format": "%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        },
    }

    def __init__(self, config_path: Optional[str] = None):
        """Initialize configuration.

        Args:
            config_path: Path to YAML configuration file. If None, uses defaults.
        """
        self._config: Dict[str, Any] = {}
        self._base_dir = Path.cwd()
        self._load_defaults()

        if config_path:
            self._load_yaml(config_path)

        self._load_env_overrides()
        self._validate()

    def _load_defaults(self) -> None:
        """Load default configuration values."""
        self._config = self._deep_copy(self.DEFAULTS)

    def _deep_copy(self, obj: Any) -> Any:
        """Deep copy a nested dictionary."""
        if isinstance(obj, dict):
            return {k: self._deep_copy(v) for k, v in obj.items()}
        elif isinstance(obj, list):
            return [self._deep_copy(item) for item in obj]
        else:
            return obj

    def _load_yaml(self, config_path: str) -> None:
        """Load configuration from YAML file.

        Relative paths inside the file resolve against the file's directory.

        Args:
            config_path: Path to YAML configuration file.

        Raises:
            ConfigurationError: If file cannot be read or parsed.
        """
        try:
            path = Path(config_path).expanduser()
            if not path.exists():
                raise ConfigurationError(f"Configuration file not found: {config_path}")

            with open(path, 'r', encoding='utf-8') as f:
                yaml_config = yaml.safe_load(f)

            self._base_dir = path.resolve().parent

            if yaml_config is None:
                return

            if not isinstance(yaml_config, dict):
                raise ConfigurationError("Configuration file must contain a YAML dictionary")

            self._merge_config(self._config, yaml_config)

        except yaml.YAMLError as e:
            raise ConfigurationError(f"Failed to parse YAML configuration: {e}")
        except IOError as e:
            raise ConfigurationError(f"Failed to read configuration file: {e}")

    def _merge_config(self, base: Dict[str, Any], override: Dict[str, Any]) -> None:
        """Merge override configuration into base configuration.

        Args:
            base: Base configuration dictionary (modified in place).
            override: Override configuration dictionary.
        """
        for key, value in override.items():
            if key in base and isinstance(base[key], dict) and isinstance(value, dict):
                self._merge_config(base[key], value)
            else:
                base[key] = value

    def _env_int(self, name: str) -> Optional[int]:
        """Read an integer environment variable, if set."""
        env_val = os.getenv(name)
        if not env_val:
            return None
        try:
            return int(env_val)
        except ValueError:
            raise ConfigurationError(f"{name} must be an integer: {env_val}")

    def _load_env_overrides(self) -> None:
        """Load configuration overrides from environment variables.

        Examples:
            - OUT_DIR overrides output.out_dir
            - PIPELINE_SEED overrides split.seed
            - BACKEND_MODE overrides backend.mode
        """
        # Corpus / output
        if env_val := os.getenv("DATA_DIR"):
            self._config["corpus"]["data_dir"] = env_val

        if env_val := os.getenv("OUT_DIR"):
            self._config["output"]["out_dir"] = env_val

        # Split section
        seed = self._env_int("PIPELINE_SEED")
        if seed is not None:
            self._config["split"]["seed"] = seed

        if env_val := os.getenv("OVERLAP_MODE"):
            self._config["split"]["overlap_mode"] = env_val

        # BPE section
        vocab_size = self._env_int("BPE_VOCAB_SIZE")
        if vocab_size is not None:
            self._config["bpe"]["vocab_size"] = vocab_size

        # Backend section
        if env_val := os.getenv("BACKEND_MODE"):
            self._config["backend"]["mode"] = env_val

        if env_val := os.getenv("BACKEND_ENDPOINT"):
            self._config["backend"]["endpoint"] = env_val

        if env_val := os.getenv("BACKEND_MODEL"):
            self._config["backend"]["model"] = env_val

        if env_val := os.getenv("BEDROCK_REGION"):
            self._config["backend"]["region"] = env_val

        # Processing section
        retry_attempts = self._env_int("RETRY_ATTEMPTS")
        if retry_attempts is not None:
            self._config["processing"]["retry_attempts"] = retry_attempts

        retry_delay = self._env_int("RETRY_DELAY")
        if retry_delay is not None:
            self._config["processing"]["retry_delay"] = retry_delay

        # Logging section
        if env_val := os.getenv("LOG_LEVEL"):
            self._config["logging"]["level"] = env_val

    def _validate(self) -> None:
        """Validate configuration values.

        Raises:
            ConfigurationError: If configuration is invalid.
        """
        # Ratios
        ratios = self._config["split"]["ratios"]
        if not isinstance(ratios, dict) or set(ratios) != {"train", "test", "validation"}:
            raise ConfigurationError("split.ratios must define train, test and validation")
        for name, value in ratios.items():
            if not isinstance(value, (int, float)) or not 0.0 <= value <= 1.0:
                raise ConfigurationError(f"split.ratios.{name} must be in [0, 1]: {value}")
        if abs(sum(ratios.values()) - 1.0) > 1e-9:
            raise ConfigurationError(
                f"split.ratios must sum to 1, got {sum(ratios.values())}"
            )

        if not isinstance(self._config["split"]["seed"], int):
            raise ConfigurationError("split.seed must be an integer")

        overlap_mode = self._config["split"]["overlap_mode"]
        if overlap_mode not in VALID_OVERLAP_MODES:
            raise ConfigurationError(
                f"Invalid overlap mode: {overlap_mode}. Must be one of {VALID_OVERLAP_MODES}"
            )

        if not 0.0 <= self._config["split"]["tolerance"] < 1.0:
            raise ConfigurationError("split.tolerance must be in [0, 1)")

        # Directions
        directions = self._config["corpus"]["directions"]
        if not isinstance(directions, list):
            raise ConfigurationError("corpus.directions must be a list")
        seen = set()
        for entry in directions:
            if not isinstance(entry, dict) or "source" not in entry or "target" not in entry:
                raise ConfigurationError(
                    f"Invalid direction entry: {entry}. Needs 'source' and 'target'"
                )
            key = (entry["source"], entry["target"])
            if key in seen:
                raise ConfigurationError(f"Direction listed twice: {key[0]}-{key[1]}")
            seen.add(key)
            domains = entry.get("domains")
            if not isinstance(domains, dict) or not domains:
                raise ConfigurationError(
                    f"Direction {key[0]}-{key[1]} must map at least one domain to a file stem"
                )

        # BPE
        if self._config["bpe"]["vocab_size"] <= 0:
            raise ConfigurationError("bpe.vocab_size must be positive")
        if self._config["bpe"]["min_frequency"] < 1:
            raise ConfigurationError("bpe.min_frequency must be at least 1")

        # Fuzzy matching
        max_matches = self._config["fuzzy"]["max_matches"]
        if not isinstance(max_matches, int) or not 0 <= max_matches <= 10:
            raise ConfigurationError(f"fuzzy.max_matches must be in [0, 10]: {max_matches}")
        if self._config["fuzzy"]["pool_split"] not in VALID_POOL_SPLITS:
            raise ConfigurationError(
                f"fuzzy.pool_split must be one of {VALID_POOL_SPLITS}"
            )
        fuzzy = self._config["fuzzy"]
        if fuzzy["embedder"] not in VALID_EMBEDDERS:
            raise ConfigurationError(
                f"Invalid embedder: {fuzzy['embedder']}. Must be one of {VALID_EMBEDDERS}"
            )
        if fuzzy["embedder"] == "http" and not (fuzzy["embedding_endpoint"] and fuzzy["embedding_model"]):
            raise ConfigurationError("http embedder needs fuzzy.embedding_endpoint and fuzzy.embedding_model")

        # Backend
        backend_mode = self._config["backend"]["mode"]
        if backend_mode not in VALID_BACKEND_MODES:
            raise ConfigurationError(
                f"Invalid backend mode: {backend_mode}. Must be one of {VALID_BACKEND_MODES}"
            )
        if self._config["backend"]["concurrency"] < 1:
            raise ConfigurationError("backend.concurrency must be at least 1")
        if self._config["backend"]["timeout"] <= 0:
            raise ConfigurationError("backend.timeout must be positive")
        if self._config["backend"]["length_multiplier"] <= 0:
            raise ConfigurationError("backend.length_multiplier must be positive")

        # Processing
        if self._config["processing"]["retry_attempts"] < 0:
            raise ConfigurationError("retry_attempts must be non-negative")

        if self._config["processing"]["retry_delay"] < 0:
            raise ConfigurationError("retry_delay must be non-negative")

        # Validate log level
        log_level = self._config["logging"]["level"]
        if log_level not in VALID_LOG_LEVELS:
            raise ConfigurationError(
                f"Invalid log level: {log_level}. Must be one of {VALID_LOG_LEVELS}"
            )

    def validate_inputs(self) -> None:
        """Check that every configured corpus file exists.

        Called by commands before any work starts.

        Raises:
            ConfigurationError: If no direction is configured or a file is missing.
        """
        if not self.directions:
            raise ConfigurationError("No corpus directions configured")

        missing: List[str] = []
        for entry in self.directions:
            for stem in entry["domains"].values():
                for lang in (entry["source"], entry["target"]):
                    path = self.data_dir / f"{stem}.{lang}"
                    if not path.exists():
                        missing.append(str(path))
        if missing:
            raise ConfigurationError(f"Missing corpus files: {', '.join(missing)}")

    def resolve(self, path: str) -> Path:
        """Resolve a configured path relative to the config file directory."""
        resolved = Path(path).expanduser()
        if not resolved.is_absolute():
            resolved = self._base_dir / resolved
        return resolved

    def set(self, key: str, value: Any) -> None:
        """Override a value by dot-notation key and re-validate.

        Args:
            key: Configuration key in dot notation (e.g., "split.seed")
            value: New value
        """
        keys = key.split(".")
        target = self._config
        for k in keys[:-1]:
            target = target.setdefault(k, {})
        target[keys[-1]] = value
        self._validate()

    # Property accessors for easy access to configuration values

    @property
    def data_dir(self) -> Path:
        """Get the raw corpus directory."""
        return self.resolve(self._config["corpus"]["data_dir"])

    @property
    def directions(self) -> List[Dict[str, Any]]:
        """Get the configured directions with their domain -> stem maps."""
        return self._config["corpus"]["directions"]

    @property
    def out_dir(self) -> Path:
        """Get the output directory."""
        return self.resolve(self._config["output"]["out_dir"])

    @property
    def ratios(self) -> Dict[str, float]:
        """Get the train/test/validation ratios."""
        return dict(self._config["split"]["ratios"])

    @property
    def seed(self) -> int:
        """Get the split seed."""
        return self._config["split"]["seed"]

    @property
    def overlap_mode(self) -> str:
        """Get the overlap mode (strict or source-source)."""
        return self._config["split"]["overlap_mode"]

    @property
    def tolerance(self) -> float:
        """Get the split ratio tolerance."""
        return self._config["split"]["tolerance"]

    @property
    def min_domain_size(self) -> int:
        """Get the smallest domain that is split rather than kept in train."""
        return self._config["split"]["min_domain_size"]

    @property
    def bpe_vocab_size(self) -> int:
        """Get the BPE vocabulary size."""
        return self._config["bpe"]["vocab_size"]

    @property
    def bpe_model_path(self) -> Path:
        """Get the joint BPE model path, relative to the output directory."""
        path = Path(self._config["bpe"]["model_path"]).expanduser()
        return path if path.is_absolute() else self.out_dir / path

    @property
    def bpe_joint(self) -> bool:
        """Whether one BPE model covers every direction."""
        return bool(self._config["bpe"]["joint"])

    @property
    def bpe_min_frequency(self) -> int:
        """Get the minimum character frequency for the BPE base alphabet."""
        return self._config["bpe"]["min_frequency"]

    @property
    def fuzzy_direction(self) -> Optional[str]:
        """Get the direction used for fuzzy-match translation."""
        return self._config["fuzzy"]["direction"]

    @property
    def max_matches(self) -> int:
        """Get the number of fuzzy matches put into a prompt."""
        return self._config["fuzzy"]["max_matches"]

    @property
    def pool_split(self) -> str:
        """Get the split the retrieval pool is built from."""
        return self._config["fuzzy"]["pool_split"]

    @property
    def embedder(self) -> str:
        """Get the embedder used for fuzzy-match retrieval."""
        return self._config["fuzzy"]["embedder"]

    @property
    def embedding_endpoint(self) -> Optional[str]:
        """Get the external embedding service URL."""
        return self._config["fuzzy"]["embedding_endpoint"]

    @property
    def embedding_model(self) -> Optional[str]:
        """Get the external embedding model identifier."""
        return self._config["fuzzy"]["embedding_model"]

    @property
    def backend_mode(self) -> str:
        """Get the completion backend mode."""
        return self._config["backend"]["mode"]

    @property
    def backend_endpoint(self) -> str:
        """Get the completion endpoint URL."""
        return self._config["backend"]["endpoint"]

    @property
    def backend_model(self) -> str:
        """Get the completion model identifier."""
        return self._config["backend"]["model"]

    @property
    def backend_region(self) -> str:
        """Get the Bedrock AWS region."""
        return self._config["backend"]["region"]

    @property
    def top_p(self) -> float:
        """Get the nucleus sampling parameter."""
        return float(self._config["backend"]["top_p"])

    @property
    def temperature(self) -> float:
        """Get the sampling temperature."""
        return float(self._config["backend"]["temperature"])

    @property
    def length_multiplier(self) -> float:
        """Get the output length multiplier."""
        return float(self._config["backend"]["length_multiplier"])

    @property
    def backend_timeout(self) -> float:
        """Get the per-request timeout in seconds."""
        return float(self._config["backend"]["timeout"])

    @property
    def backend_concurrency(self) -> int:
        """Get the number of parallel backend requests."""
        return self._config["backend"]["concurrency"]

    @property
    def api_key(self) -> Optional[str]:
        """Get the backend credential from the environment."""
        return os.getenv(API_KEY_ENV_VAR)

    @property
    def retry_attempts(self) -> int:
        """Get the number of retry attempts."""
        return self._config["processing"]["retry_attempts"]

    @property
    def retry_delay(self) -> int:
        """Get the base retry delay in seconds."""
        return self._config["processing"]["retry_delay"]

    @property
    def log_level(self) -> str:
        """Get the logging level."""
        return self._config["logging"]["level"]

    @property
    def log_format(self) -> str:
        """Get the logging format string."""
        return self._config["logging"]["format"]

    def get(self, key: str, default: Any = None) -> Any:
        """Get a configuration value by dot-notation key.

        Args:
            key: Configuration key in dot notation (e.g., "backend.mode")
            default: Default value if key not found

        Returns:
            Configuration value or default
        """
        keys = key.split(".")
        value = self._config

        for k in keys:
            if isinstance(value, dict) and k in value:
                value = value[k]
            else:
                return default

        return value
