"""
Experiment configuration.

Configs are dotenv-style ``key=value`` files whose dotted prefixes name the
sections, for example::

    model.kind=GlobalHamiltonian
    model.case_tag=Equal
    model.lambda1=1
    model.lambda2=1
    model.coupling.k3=-0.9
    numerics.h_list=-1e-3,-1e-4
    output.directory=reports/equal

The raw text is grouped into sections by ``parse_config_text`` and validated by
``ExperimentConfigSerializer``; ``save()`` returns an ``ExperimentConfig``
holding the validated sections and the built ``ModelSpec``.
"""
import io
import logging
from dataclasses import dataclass

from dotenv import dotenv_values
from rest_framework import serializers

from . import conf
from .exceptions import ModelError
from .manager import model_manager
from .models import CaseTag, ModelKind
from .reports import canonical_hash

logger = logging.getLogger(__name__)

SECTIONS = ('model', 'numerics', 'bvp', 'output')
LIST_KEYS = {
    'numerics': ('h_list', 'm_values', 'deltas'),
    'bvp': ('tau_list', 'deltas', 'ablate'),
    'output': ('formats',),
}
FORMATS = ('json', 'csv')


def _split(value, separator=','):
    return [item.strip() for item in value.split(separator) if item.strip()]


def group_config(flat):
    """
    Group flat dotted keys into the nested section dict the serializers read.

    Raises
    ------
    serializers.ValidationError
        For keys outside the known sections.
    """
    data = {section: {} for section in SECTIONS}
    unknown = []
    for key, value in flat.items():
        section, _, rest = key.partition('.')
        if section not in data or not rest:
            unknown.append(key)
            continue
        value = '' if value is None else value
        target = data[section]
        if section == 'model' and rest.startswith('coupling.'):
            target.setdefault('coupling', {})[rest[len('coupling.'):]] = value
        elif section == 'model' and rest.startswith('coeff.'):
            slot, _, monomial = rest[len('coeff.'):].partition('.')
            target.setdefault('coeffs', {}).setdefault(slot, {})[monomial] = value
        elif section == 'model' and rest == 'delta_scale':
            target['delta'] = value
        elif section == 'bvp' and rest == 'boundary':
            target['boundary'] = [_split(item) for item in _split(value, ';')]
        elif rest in LIST_KEYS.get(section, ()):
            target[rest] = _split(value)
        else:
            target[rest] = value
    if unknown:
        raise serializers.ValidationError({'config': f'Unknown keys: {", ".join(sorted(unknown))}'})
    return data


def parse_config_text(text):
    return group_config(dotenv_values(stream=io.StringIO(text)))


def read_config(path):
    """Read a config file into the nested section dict."""
    try:
        with open(path, encoding='utf-8') as handle:
            text = handle.read()
    except OSError as e:
        logger.error(f'Cannot read config {path}: {e}')
        raise serializers.ValidationError({'config': f'Cannot read {path}: {e.strerror}'})
    return parse_config_text(text)


def dump_model_config(model):
    """
    The ``model.*`` lines that rebuild ``model`` through the serializers.
    """
    kind = ModelKind(model.kind)
    lines = [f'model.kind={kind.value}']
    eigen = model.eigen
    coupling = dict(model.coupling)
    if kind is ModelKind.CNLSE_REDUCTION:
        lines += [f'model.lambda1={coupling.pop("omega1")!r}', f'model.lambda2={coupling.pop("omega2")!r}',
                  f'model.alpha={coupling.pop("alpha")!r}', f'model.beta={coupling.pop("beta")!r}']
        coupling = {}
    else:
        lines += [f'model.case_tag={eigen.case_tag.value}', f'model.lambda1={eigen.lambda1!r}',
                  f'model.lambda2={eigen.lambda2!r}']
    if kind is ModelKind.FIGURE_EIGHT:
        lines.append(f'model.asymmetry={coupling.pop("asymmetry", 0.0)!r}')
    lines.append(f'model.delta={model.delta_scale!r}')
    for name, value in sorted(coupling.items()):
        if kind is ModelKind.LOCAL_NORMAL_FORM:
            lines.append(f'model.coeff.{name}={value!r}')
        else:
            lines.append(f'model.coupling.{name}={value!r}')
    return '\n'.join(lines) + '\n'


@dataclass
class ExperimentConfig:
    """
    Validated experiment configuration.

    Attributes:
        model_section (dict): validated ``model.*`` keys.
        numerics (dict): tolerances, grid and levels.
        bvp (dict): sample plan of the boundary-value checks.
        output (dict): directory and formats.
        model (ModelSpec): the model the sections describe.
    """
    model_section: dict
    numerics: dict
    bvp: dict
    output: dict
    model: object

    def canonical(self):
        return {'model': self.model_section, 'numerics': self.numerics, 'bvp': self.bvp, 'output': self.output}

    @property
    def config_hash(self):
        return canonical_hash(self.canonical())

    @property
    def h_list(self):
        return list(self.numerics['h_list'])


class ModelSectionSerializer(serializers.Serializer):
    """
    The ``model.*`` keys.

    ``lambda1``/``lambda2`` are the saddle rates; for the CNLSE reduction they
    are omega1/omega2. ``coupling`` maps names (``k1``, ``k2``, ``k3``) or
    monomials to coefficients; ``coeffs`` maps normal-form slots to
    ``{monomial: coefficient}``.
    """
    kind = serializers.ChoiceField(choices=[k.value for k in ModelKind], default=ModelKind.GLOBAL_HAMILTONIAN.value)
    case_tag = serializers.ChoiceField(choices=[c.value for c in CaseTag], required=False)
    lambda1 = serializers.FloatField(required=False)
    lambda2 = serializers.FloatField(required=False)
    delta = serializers.FloatField(default=0.1, min_value=1e-3, max_value=0.5)
    coupling = serializers.DictField(child=serializers.FloatField(), required=False)
    coeffs = serializers.DictField(child=serializers.DictField(child=serializers.FloatField()), required=False)
    asymmetry = serializers.FloatField(default=0.0)
    alpha = serializers.FloatField(required=False)
    beta = serializers.FloatField(required=False)

    REQUIRED = {
        ModelKind.GLOBAL_HAMILTONIAN.value: ('case_tag', 'lambda1', 'lambda2'),
        ModelKind.LOCAL_NORMAL_FORM.value: ('case_tag', 'lambda1', 'lambda2'),
        ModelKind.FIGURE_EIGHT.value: ('lambda1', 'lambda2'),
        ModelKind.CNLSE_REDUCTION.value: ('lambda1', 'lambda2', 'alpha', 'beta'),
    }

    def validate(self, attrs):
        missing = [name for name in self.REQUIRED[attrs['kind']] if name not in attrs]
        if missing:
            raise serializers.ValidationError(
                {name: f'This field is required for kind {attrs["kind"]}.' for name in missing}
            )
        if attrs['kind'] != ModelKind.LOCAL_NORMAL_FORM.value and attrs.get('coeffs'):
            raise serializers.ValidationError({'coeffs': 'Coefficient slots apply to LocalNormalForm models only.'})
        return attrs


class NumericsSectionSerializer(serializers.Serializer):
    """
    The ``numerics.*`` keys. Unset keys fall back to the SADDLEFLOW settings.
    """
    tol = serializers.FloatField(required=False, min_value=1e-14, max_value=1e-6)
    t_max = serializers.FloatField(required=False, min_value=1.0, max_value=1e4)
    fd_step = serializers.FloatField(required=False, min_value=1e-7, max_value=1e-3)
    grid_n = serializers.IntegerField(default=64, min_value=64, max_value=2048)
    m = serializers.FloatField(required=False, max_value=1e6)
    m_values = serializers.ListField(child=serializers.FloatField(), required=False, min_length=1)
    eps = serializers.FloatField(required=False, min_value=0.0)
    h_list = serializers.ListField(child=serializers.FloatField(), default=lambda: [-1e-3])
    deltas = serializers.ListField(child=serializers.FloatField(min_value=1e-3), required=False, min_length=1)
    max_iters = serializers.IntegerField(required=False, min_value=1, max_value=10000)
    n_samples = serializers.IntegerField(default=1000, min_value=100)
    n_points = serializers.IntegerField(default=48, min_value=8, max_value=4096)
    workers = serializers.IntegerField(required=False, min_value=1, max_value=256)

    def validate_m(self, value):
        if not value > 1.0:
            raise serializers.ValidationError('m must exceed 1.')
        return value

    def validate_m_values(self, value):
        if any(not m > 1.0 for m in value):
            raise serializers.ValidationError('Every m must exceed 1.')
        return value

    def validate_h_list(self, value):
        if len(set(value)) != len(value):
            raise serializers.ValidationError('Levels must be distinct.')
        return value

    def validate(self, attrs):
        defaults = {'tol': 'TOL', 't_max': 'T_MAX', 'fd_step': 'FD_STEP', 'm': 'CONE_M',
                    'max_iters': 'MAX_ESCAPE_ITERS', 'workers': 'WORKERS'}
        for key, setting in defaults.items():
            attrs.setdefault(key, conf.get(setting))
        attrs.setdefault('m_values', [5.0, 10.0, 20.0])
        return attrs


class BvpSectionSerializer(serializers.Serializer):
    """The ``bvp.*`` keys: transit times, the delta ladder and boundary fractions."""
    tau_list = serializers.ListField(
        child=serializers.FloatField(min_value=1e-3), default=lambda: [2.0, 4.0, 8.0], min_length=1,
    )
    deltas = serializers.ListField(
        child=serializers.FloatField(min_value=1e-4, max_value=0.5), default=lambda: [0.1, 0.05, 0.025],
    )
    boundary = serializers.ListField(
        child=serializers.ListField(child=serializers.FloatField(min_value=-1.0, max_value=1.0),
                                    min_length=4, max_length=4),
        default=lambda: [[1.0, 1.0, 1.0, 1.0], [1.0, -1.0, 0.5, -0.5], [-0.5, 1.0, -1.0, 0.25]],
        min_length=1,
    )
    nodes = serializers.IntegerField(required=False, min_value=10, max_value=200000)
    tau_growth = serializers.FloatField(default=0.0, min_value=0.0, max_value=2.0)
    ablate = serializers.ListField(child=serializers.CharField(), default=list)

    def validate_deltas(self, value):
        if len(value) < 3 or any(b >= a for a, b in zip(value, value[1:])):
            raise serializers.ValidationError('At least three strictly decreasing deltas are required.')
        return value

    def validate(self, attrs):
        attrs.setdefault('nodes', conf.get('BVP_NODES'))
        return attrs


class OutputSectionSerializer(serializers.Serializer):
    directory = serializers.CharField(default='reports')
    formats = serializers.ListField(child=serializers.ChoiceField(choices=FORMATS), default=lambda: list(FORMATS))

    def validate_formats(self, value):
        return sorted(set(value))


class ExperimentConfigSerializer(serializers.Serializer):
    """
    ExperimentConfigSerializer
    --------------------------

    Validates a grouped config and builds its model.

    Attributes:
        model (ModelSectionSerializer): model family, rates and couplings.
        numerics (NumericsSectionSerializer): tolerances, grid and levels.
        bvp (BvpSectionSerializer): boundary-value sample plan.
        output (OutputSectionSerializer): report directory and formats.

    Methods:
        validate(attrs): Cross-section rules on eps and the levels.
        create(validated_data): Builds the ModelSpec and returns an ExperimentConfig.
    """
    model = ModelSectionSerializer()
    numerics = NumericsSectionSerializer()
    bvp = BvpSectionSerializer()
    output = OutputSectionSerializer()

    def validate(self, attrs):
        """
        Check the levels and the ball radius against the section distance delta.

        Raises:
            serializers.ValidationError: If eps is not below delta, or a level
            lies outside |h| < H_BOUND_FACTOR * delta^2.
        """
        attrs = super().validate(attrs)
        delta = attrs['model']['delta']
        numerics = attrs['numerics']
        numerics.setdefault('eps', conf.get('EPS_FACTOR') * delta)
        if not 0.0 < numerics['eps'] < delta:
            raise serializers.ValidationError({'eps': f'eps must lie in (0, delta) = (0, {delta:g}).'})
        bound = conf.get('H_BOUND_FACTOR') * delta ** 2
        outside = [h for h in numerics['h_list'] if abs(h) >= bound]
        if outside:
            raise serializers.ValidationError({'h_list': f'Levels {outside} lie outside |h| < {bound:g}.'})
        numerics.setdefault('deltas', [delta, delta / 2.0])
        return attrs

    def _build_model(self, section):
        kind = section['kind']
        if kind == ModelKind.GLOBAL_HAMILTONIAN.value:
            return model_manager.build_global_model(
                section['case_tag'], section['lambda1'], section['lambda2'],
                coupling=section.get('coupling'), delta_scale=section['delta'],
            )
        if kind == ModelKind.LOCAL_NORMAL_FORM.value:
            return model_manager.build_local_normal_form(
                section['case_tag'], section['lambda1'], section['lambda2'],
                nonlinear_coeffs=section.get('coeffs'), delta_scale=section['delta'],
            )
        if kind == ModelKind.FIGURE_EIGHT.value:
            return model_manager.build_figure_eight_model(
                section['lambda1'], section['lambda2'], coupling=section.get('coupling'),
                asymmetry=section['asymmetry'], delta_scale=section['delta'],
            )
        return model_manager.build_cnlse_model(
            section['alpha'], section['beta'], section['lambda1'], section['lambda2'], delta_scale=section['delta'],
        )

    def create(self, validated_data):
        """
        Build the model described by the ``model`` section.

        Raises:
            serializers.ValidationError: If the model cannot be built; the
            message names the violated identity or constraint.
        """
        try:
            model = self._build_model(validated_data['model'])
        except ModelError as e:
            logger.error(f'Model construction failed: {e}')
            raise serializers.ValidationError({'model': str(e)})
        return ExperimentConfig(
            model_section=validated_data['model'],
            numerics=validated_data['numerics'],
            bvp=validated_data['bvp'],
            output=validated_data['output'],
            model=model,
        )


def load_experiment(data, overrides=None):
    """
    Validate grouped config ``data`` with command-line ``overrides`` applied.

    ``overrides`` maps h, eps, m, grid_n and out to values; None entries are
    ignored.

    Returns
    -------
    ExperimentConfig

    Raises
    ------
    serializers.ValidationError
    """
    data = {section: dict(data.get(section, {})) for section in SECTIONS}
    targets = {'h': ('numerics', 'h_list'), 'eps': ('numerics', 'eps'), 'm': ('numerics', 'm'),
               'grid_n': ('numerics', 'grid_n'), 'out': ('output', 'directory')}
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        section, name = targets[key]
        data[section][name] = [value] if key == 'h' else value
    serializer = ExperimentConfigSerializer(data=data)
    serializer.is_valid(raise_exception=True)
    config = serializer.save()
    logger.info(f'Loaded config {config.config_hash[:12]} for model {config.model.name}')
    return config
