"""
Run configuration: one flat namespace of settings shared by every command.

Resolution order is defaults, then the JSON config file, then --seed/--out,
then --set key=value overrides.
"""
import json
import logging
from pathlib import Path
from typing import Iterable, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from app.aggregation_service import AggregationThresholds
from app.autograd import derive_seed
from app.classifiers import BiLstmConfig, CnnConfig
from app.error_handling import ConfigError
from app.training_service import TrainConfig
from config import Config

logger = logging.getLogger(__name__)

PATH_KEYS = (
    'labeled_corpus', 'labeled_test', 'threads', 'gold_threads', 'eval_data',
    'autolabeled_corpus', 'checkpoint', 'checkpoint_b', 'embeddings_path',
)


class RunConfig(BaseModel):
    model_config = ConfigDict(extra='forbid', validate_assignment=True)

    # general
    seed: int = 13
    out_dir: str = Field(default_factory=lambda: Config.DEFAULT_OUT_DIR)

    # data paths (no defaults)
    labeled_corpus: Optional[str] = None
    labeled_test: Optional[str] = None
    threads: Optional[str] = None
    gold_threads: Optional[str] = None
    eval_data: Optional[str] = None
    autolabeled_corpus: Optional[str] = None
    checkpoint: Optional[str] = None
    checkpoint_b: Optional[str] = None

    # embeddings and vocabulary
    embeddings_path: Optional[str] = None
    embed_dim: int = Field(200, gt=0)
    stage1_vocab_size: int = Field(50000, ge=2)
    stage2_vocab_size: int = Field(750000, ge=2)

    # model sizes
    stage1_hidden_size: int = Field(256, gt=0)
    stage2_hidden_size: int = Field(300, gt=0)
    num_stacked_bilstm: int = Field(2, gt=0)
    dropout: float = Field(0.5, ge=0, lt=1)
    cnn_filter_widths: List[int] = [3, 4, 5]
    cnn_maps_per_width: int = Field(200, gt=0)

    # optimisation
    stage1_learning_rate: float = Field(1e-4, ge=0)
    stage1_weight_decay: float = Field(1e-5, ge=0)
    stage2_learning_rate: float = Field(9e-5, ge=0)
    stage2_weight_decay: float = Field(1e-4, ge=0)
    batch_size: int = Field(32, gt=0)
    max_epochs: int = Field(30, gt=0)
    val_fraction: float = Field(0.1, ge=0, lt=1)
    selection_rule: Literal['best_val_eq1_f1', 'best_val_loss', 'last'] = 'best_val_eq1_f1'

    # auto-labeling
    neutral_fraction: float = Field(0.85, gt=0, lt=1)
    pos_over_neg: float = Field(1.5, ge=1)
    neg_over_pos: float = Field(1.6, ge=1)
    min_replies: int = Field(20, ge=0)
    min_tokens: int = Field(0, ge=0)
    workers: int = Field(1, gt=0)

    # systems
    stage2_models: List[Literal['bilstm', 'cnn']] = ['bilstm', 'cnn']
    ensemble: bool = True
    direct_baseline: bool = True
    render_svg: bool = True

    @field_validator('stage2_models')
    @classmethod
    def _models_unique(cls, value):
        if not value or len(set(value)) != len(value):
            raise ValueError("stage2_models must list distinct architectures")
        return value

    @field_validator('cnn_filter_widths')
    @classmethod
    def _widths_distinct(cls, value):
        if not value or any(w <= 0 for w in value) or len(set(value)) != len(value):
            raise ValueError("cnn_filter_widths must list distinct positive widths")
        return value

    def require(self, *keys: str):
        """Raise ConfigError naming the first unset key"""
        for key in keys:
            if getattr(self, key) in (None, ''):
                raise ConfigError(f"missing required setting '{key}'", details={'key': key})

    def sub_seed(self, name: str) -> int:
        return derive_seed(self.seed, name)

    def thresholds(self) -> AggregationThresholds:
        return AggregationThresholds(
            neutral_fraction=self.neutral_fraction,
            pos_over_neg=self.pos_over_neg,
            neg_over_pos=self.neg_over_pos,
        )

    def train_config(self, stage: str) -> TrainConfig:
        return TrainConfig(
            stage=stage,
            learning_rate=getattr(self, f'{stage}_learning_rate'),
            weight_decay=getattr(self, f'{stage}_weight_decay'),
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            seed=self.sub_seed(f'{stage}_train'),
            selection_rule=self.selection_rule,
        )

    def bilstm_config(self, stage: str) -> BiLstmConfig:
        return BiLstmConfig(
            embed_dim=self.embed_dim,
            hidden_size=getattr(self, f'{stage}_hidden_size'),
            num_stacked_bilstm=self.num_stacked_bilstm,
            dropout_p=self.dropout,
            vocab_size=getattr(self, f'{stage}_vocab_size'),
        )

    def cnn_config(self) -> CnnConfig:
        return CnnConfig(
            embed_dim=self.embed_dim,
            filter_widths=self.cnn_filter_widths,
            maps_per_width=self.cnn_maps_per_width,
            dropout_p=self.dropout,
            vocab_size=self.stage2_vocab_size,
        )

    def resolved(self) -> dict:
        return self.model_dump(mode='json')


def parse_override(item: str):
    """Split "key=value"; the value is read as JSON, falling back to the raw string"""
    key, sep, raw = item.partition('=')
    key = key.strip()
    if not sep or not key:
        raise ConfigError(f"override '{item}' is not of the form key=value")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def _format_validation(error: ValidationError) -> str:
    problems = []
    for item in error.errors():
        location = '.'.join(str(part) for part in item['loc']) or 'config'
        if item['type'] == 'extra_forbidden':
            problems.append(f"unknown setting '{location}'")
        else:
            problems.append(f"{location}: {item['msg']}")
    return '; '.join(problems)


def load_run_config(path=None, seed: Optional[int] = None, out: Optional[str] = None,
                    overrides: Iterable[str] = ()) -> RunConfig:
    """
    Resolve a RunConfig.

    Args:
        path: JSON config file; falls back to Config.DEFAULT_CONFIG_PATH
        seed: --seed value
        out: --out value
        overrides: "key=value" strings

    Raises:
        ConfigError: unreadable file, unknown key or invalid value
    """
    values = {}
    path = path or Config.DEFAULT_CONFIG_PATH
    if path:
        try:
            with open(path, 'r', encoding='utf-8') as handle:
                values = json.load(handle)
        except OSError as e:
            raise ConfigError(f"cannot read config file {path}: {e}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {path} is not valid JSON: {e.msg} (line {e.lineno})")
        if not isinstance(values, dict):
            raise ConfigError(f"config file {path} must contain a JSON object")
        base = Path(path).resolve().parent
        for key in PATH_KEYS:
            value = values.get(key)
            if isinstance(value, str) and value and not Path(value).is_absolute():
                values[key] = str(base / value)

    if seed is not None:
        values['seed'] = seed
    if out is not None:
        values['out_dir'] = out
    for item in overrides:
        key, value = parse_override(item)
        values[key] = value

    try:
        config = RunConfig(**values)
    except ValidationError as e:
        raise ConfigError(f"invalid configuration: {_format_validation(e)}")
    logger.debug(f"Resolved run config from {path or 'defaults'}")
    return config


def write_resolved_config(config: RunConfig, out_dir=None) -> Path:
    """Echo the fully resolved configuration into the output directory"""
    target = Path(out_dir or config.out_dir)
    target.mkdir(parents=True, exist_ok=True)
    path = target / 'resolved_config.json'
    with open(path, 'w', encoding='utf-8') as handle:
        json.dump(config.resolved(), handle, indent=2, sort_keys=True)
        handle.write('\n')
    return path
