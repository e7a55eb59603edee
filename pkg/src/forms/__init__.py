"""
Forms de validação da configuração de experimentos (JSON) usando WTForms
"""
from wtforms import (
    BooleanField,
    Field,
    FloatField,
    Form,
    FormField,
    IntegerField,
    SelectField,
    StringField,
)
from wtforms.validators import NumberRange, ValidationError

from src.models import (
    COUPLING_MODES,
    E_SOURCES,
    HEURISTIC_METHODS,
    HYBRID_MODES,
    HYBRID_SOLVERS,
    ExperimentConfig,
)
from src.validation_utils import ConfigValidationError, validate_interval


class ListField(Field):
    """Lista JSON cujos itens passam por `coerce`."""

    def __init__(self, label=None, validators=None, coerce=float, **kwargs):
        super().__init__(label, validators, **kwargs)
        self.coerce = coerce

    def process_data(self, value):
        if value is None:
            self.data = None
            return
        if isinstance(value, (str, bytes, dict)) or \
                not hasattr(value, '__iter__'):
            self.data = None
            raise ValueError('Esperada uma lista')
        try:
            self.data = [self.coerce(item) for item in value]
        except (TypeError, ValueError) as e:
            self.data = None
            raise ValueError(f'Item inválido na lista ({e})')


def _pair(value):
    lo, hi = value
    return float(lo), float(hi)


def non_empty(form, field):
    """Validador: lista com pelo menos um item"""
    if not field.data:
        raise ValidationError('Lista não pode ser vazia')


def unit_interval(form, field):
    """Validador: [lo, hi] contido em [0, 1] com lo > 0"""
    if field.data is None:
        return
    intervals = field.data if field.data and \
        isinstance(field.data[0], tuple) else [field.data]
    for interval in intervals:
        try:
            validate_interval(interval, field.name)
        except ValueError as e:
            raise ValidationError(str(e))


def each_at_least(minimum):
    def _validate(form, field):
        if field.data and min(field.data) < minimum:
            raise ValidationError(f'Todos os valores devem ser >= {minimum}')
    return _validate


def positive_or_none(form, field):
    """Validador para números opcionais estritamente positivos"""
    if field.data is not None and not field.data > 0:
        raise ValidationError('Valor deve ser > 0')


def open_unit(form, field):
    if field.data is None or not 0 < field.data < 1:
        raise ValidationError('Valor deve estar em (0, 1)')


class AnnealParamsForm(Form):
    """Form para os parâmetros do SQA"""
    T0 = FloatField('T0', default=10.0,
                    validators=[NumberRange(min=1e-12,
                                            message='T0 deve ser > 0')])
    gamma0 = FloatField('Gamma0', default=10.0,
                        validators=[NumberRange(min=0.0)])
    nu = FloatField('nu', default=0.95, validators=[open_unit])
    M = IntegerField('Réplicas', default=10,
                     validators=[NumberRange(min=1, message='M deve ser >= 1')])
    n_iter = IntegerField('Sweeps', default=50,
                          validators=[NumberRange(min=1)])
    seed = IntegerField('Semente', default=0, validators=[NumberRange(min=0)])
    coupling_mode = SelectField(
        'Acoplamento',
        choices=[(mode, mode) for mode in COUPLING_MODES],
        default='binary-literal',
    )
    energy_scale = FloatField('Escala de energia', default=None,
                              validators=[positive_or_none])
    keep_top = IntegerField('Ranking', default=10,
                            validators=[NumberRange(min=1)])
    polish = BooleanField('Descida por trocas', default=True)


class UESettingsForm(Form):
    """Form para os critérios de parada do Frank-Wolfe"""
    max_iters = IntegerField('Iterações', default=500,
                             validators=[NumberRange(min=1)])
    gap_tol = FloatField('Gap relativo', default=1e-6,
                         validators=[positive_or_none])
    line_search_tol = FloatField('Tolerância da busca', default=1e-10,
                                 validators=[positive_or_none])


class BaselineParamsForm(Form):
    """Form para as meta-heurísticas (GA, PSO, SA e busca tabu)"""
    method = SelectField(
        'Método',
        choices=[(method, method) for method in HEURISTIC_METHODS],
        default='ga',
    )
    seed = IntegerField('Semente', default=0, validators=[NumberRange(min=0)])
    ga_population = IntegerField(default=200, validators=[NumberRange(min=2)])
    ga_generations = IntegerField(default=300, validators=[NumberRange(min=1)])
    ga_tournament = IntegerField(default=3, validators=[NumberRange(min=1)])
    ga_crossover_p = FloatField(default=0.5,
                                validators=[NumberRange(min=0.0, max=1.0)])
    ga_mutation_p = FloatField(default=0.5,
                               validators=[NumberRange(min=0.0, max=1.0)])
    pso_particles = IntegerField(default=200, validators=[NumberRange(min=1)])
    pso_iterations = IntegerField(default=300, validators=[NumberRange(min=1)])
    pso_inertia = FloatField(default=0.7, validators=[NumberRange(min=0.0)])
    pso_cognitive = FloatField(default=1.5, validators=[NumberRange(min=0.0)])
    pso_social = FloatField(default=1.5, validators=[NumberRange(min=0.0)])
    pso_vmax = FloatField(default=4.0, validators=[positive_or_none])
    sa_T0 = FloatField(default=10.0, validators=[positive_or_none])
    sa_calibrate = BooleanField(default=True)
    sa_cooling = FloatField(default=0.95, validators=[open_unit])
    sa_stages = IntegerField(default=50, validators=[NumberRange(min=1)])
    sa_moves_per_stage = IntegerField(default=None)
    ts_neighbourhood = IntegerField(default=100,
                                    validators=[NumberRange(min=1)])
    ts_tenure_min = IntegerField(default=10, validators=[NumberRange(min=1)])
    ts_tenure_max = IntegerField(default=20, validators=[NumberRange(min=1)])
    ts_iterations = IntegerField(default=300, validators=[NumberRange(min=1)])
    stagnation_limit = IntegerField(default=30,
                                    validators=[NumberRange(min=1)])

    def validate_ts_tenure_max(self, field):
        if self.ts_tenure_min.data and field.data is not None and \
                field.data < self.ts_tenure_min.data:
            raise ValidationError('ts_tenure_max deve ser >= ts_tenure_min')

    def validate_sa_moves_per_stage(self, field):
        if field.data is not None and field.data < 1:
            raise ValidationError('sa_moves_per_stage deve ser >= 1')


class ExperimentConfigForm(Form):
    """Form para o arquivo --config (esquema ExperimentConfig)"""
    network = StringField('Rede', default='builtin')
    network_format = SelectField(
        'Formato',
        choices=[('native-csv', 'CSV nativo'), ('tntp', 'TNTP')],
        default='native-csv',
    )
    od_path = StringField('Arquivo OD', default=None)
    demand_level = StringField('Demanda', default='medium')
    mode = SelectField('Modo', choices=[(m, m) for m in HYBRID_MODES],
                       default='coefficient')
    k_list = ListField('Valores de k', coerce=int, default=(2, 3, 4, 5),
                       validators=[non_empty, each_at_least(1)])
    e_source = SelectField('Fonte de e',
                           choices=[(s, s) for s in E_SOURCES],
                           default='fixture')
    e_interval = ListField('Intervalo de e', default=(0.3, 0.7),
                           validators=[unit_interval])
    e_intervals = ListField('Intervalos de e', coerce=_pair,
                            default=((0.1, 0.4), (0.3, 0.7), (0.5, 0.8)),
                            validators=[non_empty, unit_interval])
    e_seed = IntegerField('Semente de e', default=0,
                          validators=[NumberRange(min=0)])
    coefficients = StringField('Coeficientes', default='compute')
    include_linear = BooleanField('Termo linear', default=True)
    lam = FloatField('Lambda', default=None, validators=[positive_or_none])
    lambda_multiplier = FloatField(
        'Multiplicador de lambda', default=10.0,
        validators=[NumberRange(min=10.0, max=100.0,
                                message='Multiplicador deve estar em [10, 100]')]
    )
    lambdas = ListField('Valores de lambda',
                        default=(2000.0, 3500.0, 5000.0, 8000.0),
                        validators=[non_empty, each_at_least(1e-12)])
    solver = SelectField('Solver', choices=[(s, s) for s in HYBRID_SOLVERS],
                         default='sqa')
    anneal = FormField(AnnealParamsForm)
    baseline = FormField(BaselineParamsForm)
    ue_settings = FormField(UESettingsForm)
    seeds = ListField('Sementes', coerce=int, default=(0, 1, 2, 3, 4),
                      validators=[non_empty, each_at_least(0)])
    top_n = IntegerField('Top N', default=5, validators=[NumberRange(min=1)])
    n_jobs = IntegerField('Workers', default=1)
    out_dir = StringField('Saída', default='runs')
    scale_sizes = ListField('Tamanhos sintéticos', coerce=int,
                            default=(76, 914),
                            validators=[non_empty, each_at_least(1)])
    k_max = IntegerField('k máximo', default=10,
                         validators=[NumberRange(min=1)])
    synth_c_range = ListField('Faixa de c', default=(100.0, 1000.0))
    synth_beta_sigma = FloatField('Desvio de beta', default=50.0,
                                  validators=[NumberRange(min=0.0)])
    synth_beta_density = FloatField('Densidade de beta', default=0.05,
                                    validators=[NumberRange(min=0.0,
                                                            max=1.0)])

    def validate_demand_level(self, field):
        if field.data in ('low', 'medium', 'high'):
            return
        try:
            if float(field.data) > 0:
                return
        except (TypeError, ValueError):
            pass
        raise ValidationError("Demanda deve ser low, medium, high ou > 0")

    def validate_synth_c_range(self, field):
        if not field.data or len(field.data) != 2 or \
                field.data[0] > field.data[1]:
            raise ValidationError('synth_c_range deve ser [lo, hi] com lo <= hi')

    def validate_n_jobs(self, field):
        if field.data is None or field.data == 0:
            raise ValidationError('n_jobs deve ser != 0 (-1 = todos)')

    def unknown_keys(self, data):
        """Chaves do JSON que não existem no esquema (inclusive aninhadas)."""
        unknown = [key for key in data if key not in self._fields]
        for name in ('anneal', 'baseline', 'ue_settings'):
            nested = data.get(name)
            if isinstance(nested, dict):
                fields = self[name].form._fields
                unknown.extend(f"{name}.{key}" for key in nested
                               if key not in fields)
        return unknown

    def to_config(self) -> ExperimentConfig:
        data = dict(self.data)
        for name in ('k_list', 'seeds', 'lambdas', 'scale_sizes'):
            data[name] = tuple(data[name])
        data['e_interval'] = _pair(data['e_interval'])
        data['e_intervals'] = tuple(data['e_intervals'])
        data['synth_c_range'] = _pair(data['synth_c_range'])
        return ExperimentConfig.from_dict(data)


def parse_experiment_config(data) -> ExperimentConfig:
    """
    Valida um dicionário de configuração e devolve o ExperimentConfig.

    Raises:
        ConfigValidationError: Chaves desconhecidas ou valores fora do domínio
    """
    if not isinstance(data, dict):
        raise ConfigValidationError({'config': ['Esperado um objeto JSON']})

    form = ExperimentConfigForm(data=data)
    errors = {}
    unknown = form.unknown_keys(data)
    if unknown:
        errors['unknown'] = [f"Chave desconhecida: {key}" for key in unknown]
    if not form.validate():
        errors.update(form.errors)
    if errors:
        raise ConfigValidationError(errors)
    return form.to_config()
