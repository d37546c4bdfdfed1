"""JSON experiment configuration.
"""
import json
import logging
import os
from dataclasses import dataclass
from typing import List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .girsanov import PathConfig
from .registry import DriftSpec, TestFunctionSpec, drift_from_dict, phi_from_dict
from .series import SeriesConfig
from .spectral import SpectralModel


log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Config parse or validation failure; fields lists the offending field paths.
    """
    def __init__(self, msg, fields=()):
        self.fields = list(fields)
        super().__init__(msg)


class _Strict(BaseModel):
    model_config = ConfigDict(extra='forbid')


class ModelConfig(_Strict):
    dim: Optional[int] = Field(None, ge=1)
    a: List[float]
    q: List[float]


class DriftConfig(_Strict):
    kind: Literal['zero', 'constant', 'bounded_sin', 'sublinear', 'linear']
    b: Optional[List[float]] = None
    amplitude: Optional[float] = None
    frequency: Optional[float] = None
    coeff: Optional[float] = None
    beta: Optional[float] = None
    scale: Optional[float] = None
    qhalf_compatible: Optional[bool] = None

    def build(self):
        return drift_from_dict(self.model_dump(exclude_none=True))


class TestFunctionConfig(_Strict):
    __test__ = False

    kind: Literal['cosine', 'gaussian_bump', 'linear', 'constant']
    h: Optional[List[float]] = None
    scale: Optional[float] = None
    c: Optional[float] = None

    def build(self):
        return phi_from_dict(self.model_dump(exclude_none=True))


class MCConfig(_Strict):
    nsamples: int = Field(2 ** 16, ge=2)
    npaths: int = Field(2 ** 15, ge=2)
    steps: int = Field(1024, ge=1)
    mode: Literal['uniform', 'dirichlet'] = 'dirichlet'
    delta: Optional[float] = Field(None, gt=0, lt=1)
    block_size: int = Field(8192, ge=1)
    couple: bool = False
    bias_estimate: bool = True


class ExperimentConfig(_Strict):
    model: Union[str, ModelConfig]
    drift: DriftConfig
    phi: TestFunctionConfig
    t: float = Field(gt=0)
    x: List[float]
    n_max: int = Field(ge=0)
    mc: MCConfig = MCConfig()
    seed: int = Field(0, ge=0)
    outputs: str = 'results'
    kappa: float = Field(1.5, gt=1)

    @field_validator('drift')
    @classmethod
    def _drift_builds(cls, v):
        v.build()
        return v

    @field_validator('phi')
    @classmethod
    def _phi_builds(cls, v):
        v.build()
        return v


@dataclass
class Experiment:
    """Resolved experiment: model loaded, registry entries built."""
    model: SpectralModel
    drift: DriftSpec
    phi: TestFunctionSpec
    t: float
    x: list
    n_max: int
    series: SeriesConfig
    paths: PathConfig
    seed: int
    outputs: str
    kappa: float


def _field_path(loc):
    return '.'.join(str(part) for part in loc)


def parse_config(text):
    """Parses and validates a JSON config.

    Raises:
        ConfigError: with the line and column of a JSON syntax error, or the
            field path of every validation failure.
    """
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError("line {} column {}: {}".format(e.lineno, e.colno, e.msg))
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        fields = [_field_path(err['loc']) for err in e.errors()]
        msg = '; '.join('{}: {}'.format(_field_path(err['loc']), err['msg']) for err in e.errors())
        raise ConfigError(msg, fields)


def serialize_config(cfg):
    return json.dumps(cfg.model_dump(mode='json', exclude_none=True), indent=2) + '\n'


def load_config(path):
    try:
        with open(path) as f:
            text = f.read()
    except OSError as e:
        raise ConfigError("cannot read config '{}': {}".format(path, e.strerror or e))
    return parse_config(text)


def build_experiment(cfg, base_dir='.', workers=1, override=False):
    """Loads the model and builds the registry entries and estimator settings.
    """
    if isinstance(cfg.model, str):
        model_path = cfg.model if os.path.isabs(cfg.model) else os.path.join(base_dir, cfg.model)
        if not os.path.isfile(model_path):
            raise ConfigError("model: file '{}' not found".format(model_path), ['model'])
        try:
            model = SpectralModel.from_json(model_path)
        except (ValueError, KeyError) as e:
            raise ConfigError("model: {}".format(e), ['model'])
    else:
        try:
            model = SpectralModel.from_dict(cfg.model.model_dump(exclude_none=True))
        except ValueError as e:
            raise ConfigError("model: {}".format(e), ['model'])
    if len(cfg.x) != model.dim:
        raise ConfigError("x: has {} coordinates but the model dimension is {}"
                          .format(len(cfg.x), model.dim), ['x'])
    drift, phi = cfg.drift.build(), cfg.phi.build()
    for name, spec in (('drift', drift), ('phi', phi)):
        try:
            spec.validate(model.dim)
        except ValueError as e:
            raise ConfigError("{}: {}".format(name, e), [name])

    mc = cfg.mc
    series = SeriesConfig(nsamples=mc.nsamples, mode=mc.mode, delta=mc.delta,
                          block_size=mc.block_size, workers=workers, override=override)
    paths = PathConfig(npaths=mc.npaths, steps=mc.steps, block_size=mc.block_size,
                       workers=workers, couple=mc.couple, bias_estimate=mc.bias_estimate,
                       override=override)
    log.debug('Built experiment: dim=%d drift=%s phi=%s seed=%d', model.dim, drift.kind, phi.kind, cfg.seed)
    return Experiment(model, drift, phi, cfg.t, list(cfg.x), cfg.n_max, series, paths,
                      cfg.seed, cfg.outputs, cfg.kappa)
