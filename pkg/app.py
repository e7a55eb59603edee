"""
QVuln - CLI para identificar combinações críticas de links.

Uso:
    python app.py net validate
    python app.py ue solve --demand medium
    python app.py coeffs compute --out runs/nd
    python app.py anneal --k 2 --config experiment.json
    python app.py sweep k --config experiment.json
"""
import argparse
import json
import logging
import os
import sys
from logging.handlers import RotatingFileHandler
from pathlib import Path

import pandas as pd
from dotenv import load_dotenv
from pythonjsonlogger import jsonlogger

from src.annealer import run_many, run_sa, run_sqa
from src.assignment import save_solution, solve_ue, wardrop_audit
from src.baselines import runtime_comparison
from src.cache_manager import from_env
from src.harness import (
    RunRecorder,
    growth,
    load_config,
    load_experiment_network,
    scalability_run,
    sweep_e,
    sweep_k,
    sweep_lambda,
)
from src.hybrid import (
    build_instance,
    energy_distribution,
    resolve_residual_ratios,
    tstt_surface,
)
from src.models import HEURISTIC_METHODS, DisruptionScenario, format_links
from src.network import fetch_tntp, load_network, validate
from src.oracle import enumerate_exact
from src.qubo import interaction_summary, save_coefficients
from src.validation_utils import (
    ConfigValidationError,
    NetworkValidationError,
    QVulnError,
    parse_link_set,
)

# ============================================
# CONFIGURAÇÃO DE LOGGING
# ============================================
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
JSON_FORMAT = '%(asctime)s %(name)s %(levelname)s %(message)s'
ND_BASELINE_TSTT = 5749.262154

logger = logging.getLogger(__name__)


def configure_logging(out_dir) -> None:
    """
    Console legível + arquivo JSON estruturado em <out>/run.log.jsonl.

    Em produção (QVULN_ENV=production) o arquivo JSON rotaciona
    (10MB x 10) e o console só mostra WARNING ou acima.
    """
    is_production = os.getenv('QVULN_ENV', 'development') == 'production'
    log_level = getattr(logging, os.getenv('LOG_LEVEL', 'INFO').upper(),
                        logging.INFO)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / 'run.log.jsonl'

    if is_production:
        file_handler = RotatingFileHandler(
            log_path,
            maxBytes=10485760,  # 10MB
            backupCount=10
        )
    else:
        file_handler = logging.FileHandler(log_path)
    file_handler.setLevel(log_level)
    file_handler.setFormatter(jsonlogger.JsonFormatter(JSON_FORMAT))

    console_handler = logging.StreamHandler()
    console_handler.setLevel(logging.WARNING if is_production else log_level)
    console_handler.setFormatter(logging.Formatter(LOG_FORMAT))

    logging.basicConfig(
        level=log_level,
        handlers=[file_handler, console_handler],
        force=True
    )


def _shutdown_logging() -> None:
    root = logging.getLogger()
    for handler in list(root.handlers):
        handler.close()
        root.removeHandler(handler)


def _bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ('true', '1', 'yes', 'sim'):
        return True
    if value in ('false', '0', 'no', 'nao', 'não'):
        return False
    raise argparse.ArgumentTypeError(f"booleano inválido: {text}")


def _write_json(path: Path, payload) -> str:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, default=str),
                    encoding='utf-8')
    return str(path)


def _write_csv(frame, path: Path) -> str:
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format='%.6g')
    return str(path)


# ============================================
# COMANDOS
# ============================================

def cmd_net_validate(args, config, recorder, out_dir):
    if config.network == "builtin":
        network = load_experiment_network(config)
    else:
        network = load_network(config.network, format=config.network_format,
                               od_path=config.od_path,
                               validate_on_load=False)
    report = validate(network)
    recorder.output('validation',
                    _write_json(out_dir / 'validation.json', report.to_dict()))
    if not report.passed:
        failure = report.first_failure
        raise NetworkValidationError(failure.name, failure.detail)
    print(f"✅ Rede '{network.name}' válida: {len(network.nodes)} nós, "
          f"{network.n_links} links, {len(network.od_pairs)} pares OD")


def cmd_net_fetch(args, config, recorder, out_dir):
    dest = Path(args.dest) if args.dest else out_dir / 'networks'
    net_path, trips_path = fetch_tntp(args.name, dest)
    recorder.output('net', net_path)
    recorder.output('trips', trips_path)
    print(f"⬇️  {net_path}\n⬇️  {trips_path}")


def cmd_ue_solve(args, config, recorder, out_dir):
    network = load_experiment_network(config)
    links = parse_link_set(args.links)
    scenario = None
    if links:
        e = resolve_residual_ratios(network, config.hybrid())
        scenario = DisruptionScenario.from_links(e, links)

    solution = solve_ue(network, scenario, settings=config.ue_settings)
    audit = wardrop_audit(network, solution, scenario)
    recorder.outputs(save_solution(network, solution, out_dir,
                                   config.ue_settings, scenario))

    if not solution.converged:
        recorder.deviation(
            f"UE não convergiu: gap {solution.relative_gap:.2e} após "
            f"{solution.iterations} iterações"
        )
    if not audit.passed:
        recorder.deviation(
            "Auditoria de Wardrop: violação máxima "
            f"{audit.worst_violation:.3e}"
        )
    if config.network == "builtin" and config.demand_level == "medium" \
            and scenario is None:
        deviation = abs(solution.tstt - ND_BASELINE_TSTT) / ND_BASELINE_TSTT
        if deviation > 0.01:
            recorder.deviation(
                f"TSTT de base {solution.tstt:.4f} difere "
                f"{deviation:.2%} da referência {ND_BASELINE_TSTT}"
            )
    print(f"TSTT = {solution.tstt:.6f} pcu·h (gap {solution.relative_gap:.2e}, "
          f"{solution.iterations} iterações)")


def cmd_coeffs_compute(args, config, recorder, out_dir):
    network = load_experiment_network(config)
    hybrid = config.hybrid(coefficients="compute")
    instance = build_instance(network, hybrid)
    recorder.outputs(save_coefficients(instance, out_dir))
    summary = interaction_summary(instance.B, instance.provenance.baseline_tstt,
                                  instance.mask)
    recorder.output('interactions', _write_json(
        out_dir / 'interactions.json',
        {'lambda': instance.lam, 'classes': summary},
    ))
    print(f"✅ Coeficientes gravados em {out_dir} ({summary})")


def cmd_coeffs_load(args, config, recorder, out_dir):
    source = args.path or config.coefficients
    if source == "compute":
        source = "fixture"
    hybrid = config.hybrid(coefficients=source)
    instance = build_instance(None, hybrid)
    baseline = instance.provenance.baseline_tstt if instance.provenance \
        else None
    summary = interaction_summary(instance.B, baseline, instance.mask)
    payload = {
        'n': instance.n,
        'lambda': instance.lam,
        'max_c': float(instance.c.max()),
        'max_abs_beta': float(abs(instance.B).max()),
        'classes': summary,
    }
    recorder.output('coefficients', _write_json(
        out_dir / 'coefficients_summary.json', payload
    ))
    print(f"Coeficientes: n={instance.n}, lambda={instance.lam:g}, {summary}")


def _methods(value, default):
    methods = [m.strip() for m in value.split(',')] if value else default
    unknown = [m for m in methods
               if m != 'sqa' and m not in HEURISTIC_METHODS]
    if unknown:
        raise ConfigValidationError(
            {'methods': [f"Método desconhecido: {m}" for m in unknown]}
        )
    return methods


def _instance_for(config, k):
    network = None
    if config.coefficients == "compute":
        network = load_experiment_network(config)
    return build_instance(network, config.hybrid(k))


def cmd_anneal(args, config, recorder, out_dir):
    k = args.k or config.k_list[0]
    instance = _instance_for(config, k)
    solver = run_sa if args.solver == 'sa' else run_sqa
    results = run_many(instance, config.anneal, config.seeds,
                       n_jobs=config.n_jobs, solver=solver)
    best = results[0]
    recorder.output('anneal_result',
                    _write_json(out_dir / 'anneal_result.json', best.to_dict()))
    recorder.output('anneal_runs', _write_json(
        out_dir / 'anneal_runs.json', [r.to_dict() for r in results]
    ))
    print(f"{args.solver.upper()} k={k}: {format_links(best.best_links)} "
          f"E={best.best_energy:.4f}")


def cmd_baseline(args, config, recorder, out_dir):
    methods = _methods(args.methods, ['sqa', *HEURISTIC_METHODS])
    base = _instance_for(config, config.k_list[0])
    instances = [base.with_k(k) for k in config.k_list]
    table = runtime_comparison(instances, methods, config.seeds,
                               anneal_params=config.anneal,
                               heuristic_params=config.baseline)
    recorder.output('comparison', _write_csv(table, out_dir / 'comparison.csv'))
    print(table.to_string(index=False))


def cmd_oracle(args, config, recorder, out_dir):
    k = args.k or config.k_list[0]
    instance = _instance_for(config, k)
    result = enumerate_exact(instance, k, keep_top=args.top)
    ranking = [
        {'rank': rank, 'links': format_links(links), 'energy': energy}
        for rank, (links, energy) in enumerate(result.ranking, start=1)
    ]
    recorder.output('ranking', _write_csv(pd.DataFrame(ranking),
                                          out_dir / f'ranking_k{k}.csv'))
    if args.histogram:
        recorder.output('histogram', _write_csv(
            energy_distribution(instance, k), out_dir / f'energy_k{k}.csv'
        ))
    print(f"Ótimo k={k}: {format_links(result.optimum)} "
          f"E={result.energy:.4f} ({result.count} conjuntos)")


def cmd_sweep(args, config, recorder, out_dir):
    cache = from_env() if config.mode == "direct" else None
    if args.axis == 'k':
        result = sweep_k(config, out_dir=out_dir, cache=cache)
        if args.surface and result.reports:
            network = load_experiment_network(config)
            e = resolve_residual_ratios(network, config.hybrid())
            surface = tstt_surface(network, result.reports.values(), e,
                                   settings=config.ue_settings,
                                   top_n=config.top_n, n_jobs=config.n_jobs)
            recorder.output('tstt_surface', _write_csv(
                surface, out_dir / 'tstt_surface.csv'
            ))
    elif args.axis == 'e':
        result = sweep_e(config, out_dir=out_dir, cache=cache)
    else:
        result = sweep_lambda(config, out_dir=out_dir)
        if not result.verdict:
            recorder.deviation(
                f"Conjuntos de topo variam com lambda: "
                f"{result.details.get('stable_per_k')}"
            )

    recorder.outputs(result.outputs)
    for key, error in result.failures.items():
        recorder.deviation(f"Célula {key} falhou: {error}")
    print(result.summary.to_string(index=False))


def cmd_scale(args, config, recorder, out_dir):
    gen_params = {
        'c_range': config.synth_c_range,
        'beta_sigma': config.synth_beta_sigma,
        'beta_density': config.synth_beta_density,
    }
    methods = _methods(args.methods, ['sqa'])
    result = scalability_run(config.scale_sizes, config.k_max, config.seeds,
                             config.anneal, gen_params, n_jobs=config.n_jobs,
                             out_dir=out_dir, methods=methods,
                             heuristic=config.baseline)
    recorder.outputs(result.outputs)
    for method, per_n in result.details['monotone'].items():
        for n, ok in per_n.items():
            if not ok:
                recorder.deviation(
                    f"{method} n={n}: energia não decresce estritamente em k"
                )
    print(result.summary.to_string(index=False))


def cmd_growth(args, config, recorder, out_dir):
    result = growth(args.n, args.k_max or config.k_max, out_dir=out_dir)
    recorder.outputs(result.outputs)
    print(result.summary.to_string(index=False))


# ============================================
# PARSER
# ============================================

def _global_flags(parser, suppress=False):
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument('--seed', type=int, default=default,
                        help='Semente única (substitui a lista de sementes)')
    parser.add_argument('--out', default=default,
                        help='Diretório de saída (padrão: $QVULN_OUT ou runs)')
    parser.add_argument('--config', default=default,
                        help='Arquivo JSON de configuração')
    parser.add_argument('--mode', choices=['coefficient', 'direct'],
                        default=default)
    parser.add_argument('--include-linear', type=_bool, default=default,
                        dest='include_linear')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='qvuln',
        description='Combinações críticas de links via QUBO e SQA'
    )
    _global_flags(parser)
    sub = parser.add_subparsers(dest='command', required=True)

    def command(name, handler, parent=sub, **kwargs):
        p = parent.add_parser(name, **kwargs)
        _global_flags(p, suppress=True)
        p.set_defaults(handler=handler)
        return p

    net = sub.add_parser('net', help='Redes: validação e download')
    net_sub = net.add_subparsers(dest='action', required=True)
    command('validate', cmd_net_validate, net_sub)
    fetch = command('fetch', cmd_net_fetch, net_sub)
    fetch.add_argument('name', help="Rede TNTP (ex: 'SiouxFalls')")
    fetch.add_argument('--dest')

    ue = sub.add_parser('ue', help='Equilíbrio do usuário')
    ue_sub = ue.add_subparsers(dest='action', required=True)
    solve = command('solve', cmd_ue_solve, ue_sub)
    solve.add_argument('--demand', help='low | medium | high | pcu/h')
    solve.add_argument('--links', help="Links interrompidos (ex: '16,19')")

    coeffs = sub.add_parser('coeffs', help='Coeficientes c e beta')
    coeffs_sub = coeffs.add_subparsers(dest='action', required=True)
    command('compute', cmd_coeffs_compute, coeffs_sub)
    load = command('load', cmd_coeffs_load, coeffs_sub)
    load.add_argument('path', nargs='?',
                      help="Diretório com c.csv/beta.csv ou 'fixture'")

    anneal = command('anneal', cmd_anneal)
    anneal.add_argument('--k', type=int)
    anneal.add_argument('--solver', choices=['sqa', 'sa'], default='sqa')

    baseline = command('baseline', cmd_baseline)
    baseline.add_argument('--methods', help="Ex: 'sqa,ga,pso,sa,ts'")

    oracle = command('oracle', cmd_oracle)
    oracle.add_argument('--k', type=int)
    oracle.add_argument('--top', type=int, default=5)
    oracle.add_argument('--histogram', action='store_true',
                        help='Exporta a energia de todos os conjuntos')

    sweep = command('sweep', cmd_sweep)
    sweep.add_argument('axis', choices=['k', 'e', 'lambda'])
    sweep.add_argument('--surface', action='store_true',
                       help='Superfície de TSTT exato (sweep k)')

    scale = command('scale', cmd_scale)
    scale.add_argument('--methods', help="Ex: 'sqa,ga'")

    growth_cmd = command('growth', cmd_growth)
    growth_cmd.add_argument('--n', type=int, default=76)
    growth_cmd.add_argument('--k-max', type=int, dest='k_max')

    return parser


def _overrides(args) -> dict:
    overrides = {
        'mode': getattr(args, 'mode', None),
        'include_linear': getattr(args, 'include_linear', None),
        'demand_level': getattr(args, 'demand', None),
    }
    seed = getattr(args, 'seed', None)
    if seed is not None:
        overrides['seeds'] = [seed]
        overrides['anneal'] = {'seed': seed}
        overrides['baseline'] = {'seed': seed}
    if getattr(args, 'command', None) == 'coeffs' and \
            getattr(args, 'action', None) == 'load' and args.path:
        overrides['coefficients'] = args.path
    return overrides


def _command_name(args) -> str:
    action = getattr(args, 'action', None) or getattr(args, 'axis', None)
    return f"{args.command} {action}" if action else args.command


def main(argv=None) -> int:
    """
    Ponto de entrada da CLI.

    Returns:
        0 em sucesso, 2 para erros conhecidos (entrada, UE, coeficientes),
        1 para falhas inesperadas
    """
    load_dotenv()
    args = build_parser().parse_args(argv)
    out_dir = Path(getattr(args, 'out', None) or os.getenv('QVULN_OUT', 'runs'))
    configure_logging(out_dir)
    command = _command_name(args)

    try:
        config = load_config(getattr(args, 'config', None), _overrides(args))
    except QVulnError as e:
        logger.error(f"Configuração rejeitada: {e}")
        print(f"Erro: {e}", file=sys.stderr)
        recorder = RunRecorder(command, {'argv': list(argv or sys.argv[1:])},
                               out_dir)
        recorder.finish("failed", str(e))
        _shutdown_logging()
        return 2

    recorder = RunRecorder(command, config.to_dict(), out_dir)
    logger.info(f"🚀 qvuln {command} → {out_dir}")
    try:
        with recorder.step(command):
            args.handler(args, config, recorder, out_dir)
        recorder.finish()
        return 0
    except QVulnError as e:
        logger.error(f"{type(e).__name__}: {e}")
        print(f"Erro: {e}", file=sys.stderr)
        recorder.finish("failed", f"{type(e).__name__}: {e}")
        return 2
    except Exception as e:
        logger.error(f"Falha inesperada em '{command}': {e}", exc_info=True)
        print(f"Erro inesperado: {e}", file=sys.stderr)
        recorder.finish("failed", f"{type(e).__name__}: {e}")
        return 1
    finally:
        _shutdown_logging()


if __name__ == '__main__':
    sys.exit(main())
