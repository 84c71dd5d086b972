"""
SA3: Configuration Manager
Loads, validates and serializes run configurations.

A run configuration is one JSON document with four sections:

    model   architecture (ModelConfig fields except attention)
    train   optimisation (TrainConfig fields, attention_mode included)
    data    dataset directory and evaluation workers
    output  run directory and metrics logging interval

Unknown keys are rejected at load time; values are validated when the
document is turned into a RunConfig. Flags override file values.
"""

import copy
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Dict, Optional, Union

from standards.errors import InvalidArgumentError
from standards.result_types import Fault, FaultKind, Ok, Result, fault
from systems.model import ModelConfig
from systems.training import TrainConfig


def _model_defaults() -> Dict[str, Any]:
    defaults = ModelConfig().to_dict()
    # attention is taken from train.attention_mode
    del defaults['attention']
    return defaults


@dataclass(frozen=True)
class RunConfig:
    """
    Validated configuration of one training/evaluation run.

    Invariants:
    - model.attention == train.attention_mode
    - log_interval ≥ 1, eval_workers ≥ 1
    """
    model: ModelConfig
    train: TrainConfig
    data_dir: str
    out_dir: str
    log_interval: int = 50
    eval_workers: int = 1

    def __post_init__(self):
        if self.log_interval < 1:
            raise InvalidArgumentError(f"output.log_interval: must be ≥ 1, got {self.log_interval}")
        if self.eval_workers < 1:
            raise InvalidArgumentError(f"data.eval_workers: must be ≥ 1, got {self.eval_workers}")
        if self.model.attention != self.train.attention_mode:
            raise InvalidArgumentError(
                f"model.attention '{self.model.attention}' disagrees with train.attention_mode "
                f"'{self.train.attention_mode}'")

    def to_dict(self) -> Dict[str, Any]:
        model = self.model.to_dict()
        del model['attention']
        return {
            'version': ConfigManager.VERSION,
            'model': model,
            'train': self.train.to_dict(),
            'data': {'dir': self.data_dir, 'eval_workers': self.eval_workers},
            'output': {'dir': self.out_dir, 'log_interval': self.log_interval},
        }


class ConfigManager:
    """Manages run configuration documents."""

    VERSION = 1

    DEFAULT_CONFIG = {
        'version': VERSION,
        'model': _model_defaults(),
        'train': TrainConfig().to_dict(),
        'data': {
            'dir': 'data/train',
            'eval_workers': 1,
        },
        'output': {
            'dir': 'runs/default',
            'log_interval': 50,
        },
    }

    def __init__(self, document: Optional[Dict[str, Any]] = None):
        """Start from the defaults, overlaid with `document` when given.

        Raises:
            InvalidArgumentError: `document` holds keys the defaults do not
        """
        self.config = copy.deepcopy(self.DEFAULT_CONFIG)
        if document is not None:
            self._merge_config(self.config, document, '')

    @classmethod
    def from_file(cls, config_path: Union[str, Path]) -> Result['ConfigManager', Fault]:
        """Load a JSON document over the defaults.

        Returns:
            Success[ConfigManager]
            Failure[Fault]: MISSING_ASSET, PARSE or CONFIG (unknown key)
        """
        path = Path(config_path)
        if not path.is_file():
            return fault(FaultKind.MISSING_ASSET, "config file not found", str(path))
        try:
            document = json.loads(path.read_text(encoding='utf-8'))
        except json.JSONDecodeError as e:
            return fault(FaultKind.PARSE, f"malformed config: {e.msg}", str(path), e.lineno)
        except (OSError, UnicodeDecodeError) as e:
            return fault(FaultKind.IO, f"cannot read config: {e}", str(path))
        if not isinstance(document, dict):
            return fault(FaultKind.PARSE, "config must be a JSON object", str(path))
        try:
            return Ok(cls(document))
        except InvalidArgumentError as e:
            return fault(FaultKind.CONFIG, str(e), str(path))

    def _merge_config(self, base: Dict, override: Dict, prefix: str) -> None:
        """Recursively overlay `override`, rejecting keys missing from `base`."""
        for key, value in override.items():
            dotted = f"{prefix}{key}"
            if key not in base:
                raise InvalidArgumentError(f"unknown config key '{dotted}'")
            if isinstance(base[key], dict):
                if not isinstance(value, dict):
                    raise InvalidArgumentError(f"config key '{dotted}' must be an object")
                self._merge_config(base[key], value, dotted + '.')
            else:
                base[key] = value

    def save(self, config_path: Union[str, Path]) -> Result[Path, Fault]:
        path = Path(config_path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, 'w', encoding='utf-8') as f:
                json.dump(self.config, f, indent=2, sort_keys=True)
                f.write('\n')
        except OSError as e:
            return fault(FaultKind.IO, f"cannot write config: {e}", str(path))
        return Ok(path)

    def get(self, path: str, default: Any = None) -> Any:
        """Get configuration value by dot-separated path (e.g. 'train.base_lr')."""
        value = self.config
        for key in path.split('.'):
            if isinstance(value, dict) and key in value:
                value = value[key]
            else:
                return default
        return value

    def set(self, path: str, value: Any) -> None:
        """Set an existing configuration value by dot-separated path.

        Raises:
            InvalidArgumentError: the path names no known key
        """
        keys = path.split('.')
        config = self.config
        for key in keys[:-1]:
            if not isinstance(config.get(key), dict):
                raise InvalidArgumentError(f"unknown config key '{path}'")
            config = config[key]
        if keys[-1] not in config or isinstance(config[keys[-1]], dict):
            raise InvalidArgumentError(f"unknown config key '{path}'")
        config[keys[-1]] = value

    def to_run_config(self) -> Result[RunConfig, Fault]:
        """Validate every section.

        Returns:
            Success[RunConfig]
            Failure[Fault]: VALIDATION with the offending field in the message
        """
        train_section = dict(self.config['train'])
        model_section = dict(self.config['model'], attention=train_section.get('attention_mode', 'cis'))
        try:
            train = TrainConfig(**train_section)
            model = ModelConfig.from_dict(model_section)
            return Ok(RunConfig(
                model=model,
                train=train,
                data_dir=str(self.get('data.dir')),
                out_dir=str(self.get('output.dir')),
                log_interval=int(self.get('output.log_interval')),
                eval_workers=int(self.get('data.eval_workers')),
            ))
        except InvalidArgumentError as e:
            return fault(FaultKind.VALIDATION, str(e))
        except (TypeError, ValueError) as e:
            return fault(FaultKind.VALIDATION, f"config value has the wrong type: {e}")


def run_config_from(document: Dict[str, Any]) -> Result[RunConfig, Fault]:
    """Defaults overlaid with `document`, validated in one step."""
    try:
        manager = ConfigManager(document)
    except InvalidArgumentError as e:
        return fault(FaultKind.CONFIG, str(e))
    return manager.to_run_config()


def with_attention(run: RunConfig, mode: str) -> RunConfig:
    """Same run with another attention variant in both model and train sections."""
    return replace(run, model=replace(run.model, attention=mode), train=replace(run.train, attention_mode=mode))
