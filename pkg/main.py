import argparse
import logging
import os
import sys
from typing import Any, Dict, List, Optional

from data.config_manager import ConfigManager, get_preset
from data.result_store import RESULT_COLUMNS, ResultStore
from logic.errors import ConfigError, InversionError, NumericalError
from logic.experiment_runner import (InversionConfig, TableSpec, run_rate_study, run_single, run_table,
                                     selftest)
from logic.forward import SourceSpec, solve_forward
from logic.mesh_fem import build_mesh
from logic.synthdata import exact_coefficient
from ui.results_view import ResultsView

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def get_base_path():
    """ Get the base path for data files, for PyInstaller, Nuitka, or Dev. """
    # PyInstaller
    if getattr(sys, 'frozen', False):
        return os.path.dirname(sys.executable)

    # Nuitka (Compiled)
    # Note: In Nuitka --onefile, __file__ points to temp dir, but sys.argv[0] points to original exe
    if "__compiled__" in globals():
        return os.path.dirname(os.path.abspath(sys.argv[0]))

    # Development (Normal Python)
    return os.path.dirname(os.path.abspath(__file__))


def setup_logging(out_dir: str, verbose: bool) -> None:
    """debug.log in the output directory, plus warnings and errors on stderr."""
    try:
        os.makedirs(out_dir, exist_ok=True)
        logging.basicConfig(
            level=logging.DEBUG if verbose else logging.INFO,
            format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
            filename=os.path.join(out_dir, 'debug.log'),
            filemode='w',
            encoding='utf-8',
            force=True,
        )
    except Exception as e:
        # Fallback if logging setup fails (e.g. permission denied in the output dir)
        print(f"Failed to setup logging: {e}", file=sys.stderr)
        logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO, force=True)
        logger.error(f"Logging setup failed: {e}")

    console = logging.StreamHandler(sys.stderr)
    console.setLevel(logging.WARNING)
    console.setFormatter(logging.Formatter('%(levelname)s: %(message)s'))
    logging.getLogger().addHandler(console)

    logger.info("=== Run Startup ===")
    logger.info(f"sys.argv: {sys.argv}")
    logger.info(f"Calculated Base Path: {get_base_path()}")
    logger.info(f"Is Compiled (Nuitka): {'__compiled__' in globals()}")


# Global exception hook so crashes end up in debug.log
def excepthook(exc_type, exc_value, exc_traceback):
    logger.error("Uncaught exception", exc_info=(exc_type, exc_value, exc_traceback))
    sys.__excepthook__(exc_type, exc_value, exc_traceback)


sys.excepthook = excepthook


def _float_list(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"Expected comma-separated numbers, got '{text}'") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help="実行またはテーブル設定の JSON ファイル (フラグの値が優先されます)")
    common.add_argument('--example', help="smooth1d, nonsmooth1d, smooth2d のいずれか")
    common.add_argument('--alpha', type=float)
    common.add_argument('--M', type=int, help="逆問題メッシュの各方向の分割数")
    common.add_argument('--N', type=int, help="逆問題の時間ステップ数")
    common.add_argument('--fine-M', dest='fine_M', type=int)
    common.add_argument('--fine-N', dest='fine_N', type=int)
    common.add_argument('--eps', type=float, help="相対ノイズレベル")
    common.add_argument('--gamma', type=float, help="H1 正則化の重み")
    common.add_argument('--T0', type=float, help="観測区間の開始時刻")
    common.add_argument('--seed', type=int)
    common.add_argument('--c0', type=float)
    common.add_argument('--c1', type=float)
    common.add_argument('--out', default=None, help="出力先ディレクトリ (既定: main.py と同じ場所の results)")
    common.add_argument('--jobs', type=int, default=1)
    common.add_argument('--verbose', action='store_true')

    parser = argparse.ArgumentParser(description="劣拡散方程式の順問題ソルバーと拡散係数の同定")
    sub = parser.add_subparsers(dest='command', required=True)
    sub.add_parser('solve-forward', parents=[common], help="真の係数で順問題を解く")
    sub.add_parser('invert', parents=[common], help="逆問題を1回解く")
    table = sub.add_parser('table', parents=[common], help="再構成誤差のテーブルを再現する")
    table.add_argument('--preset', choices=['table1', 'table2', 'table3', 'table4', 'table5'])
    rate = sub.add_parser('rate-study', parents=[common], help="ノイズレベルに対する収束率を調べる")
    rate.add_argument('--preset', choices=['rate'], default='rate')
    rate.add_argument('--alphas', type=_float_list)
    rate.add_argument('--eps-list', dest='eps_list', type=_float_list)
    sub.add_parser('selftest', parents=[common], help="簡易な数値チェック")
    return parser


_RUN_KEYS = ('example', 'alpha', 'M', 'N', 'fine_M', 'fine_N', 'eps', 'gamma', 'T0', 'seed', 'c0', 'c1')


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    return {key: getattr(args, key, None) for key in _RUN_KEYS}


def _load_config(args: argparse.Namespace) -> Dict[str, Any]:
    config = ConfigManager(args.config).load_config()
    return ConfigManager.apply_overrides(config, _overrides(args))


def cmd_solve_forward(args, out_dir: str, view: ResultsView) -> int:
    config = InversionConfig.from_dict(_load_config(args))
    example = config.spec
    mesh = build_mesh(example.dim, config.M)
    traj = solve_forward(mesh, exact_coefficient(mesh, example), example.u0,
                         SourceSpec(config.source_mode, example.f), config.alpha, config.N, example.T)
    ResultStore.write_trajectory_csv(os.path.join(out_dir, "trajectory.csv"), traj)
    ResultStore.save_mesh_descriptor(os.path.join(out_dir, "mesh.json"), mesh)
    view.show_message(f"順問題 {example.name}: {traj.N} ステップ, {mesh.n_nodes} 節点 -> {out_dir}")
    return EXIT_OK


def cmd_invert(args, out_dir: str, view: ResultsView) -> int:
    config = InversionConfig.from_dict(_load_config(args))
    os.makedirs(out_dir, exist_ok=True)
    # fully resolved, so `invert --config <out>/config.json` repeats the run
    ConfigManager(os.path.join(out_dir, 'config.json')).save_config(config.to_dict())
    outcome = run_single(config, out_dir)
    ResultStore.write_csv(os.path.join(out_dir, "result.csv"), RESULT_COLUMNS, [outcome.row])
    view.show_single(outcome.row, outcome.result.final.total if outcome.result.final else None)
    return EXIT_OK


def cmd_table(args, out_dir: str, view: ResultsView) -> int:
    overrides = {k: v for k, v in _overrides(args).items() if v is not None}
    if args.preset:
        spec = TableSpec.from_preset(args.preset, overrides)
    elif args.config:
        raw = ConfigManager(args.config).load_config()
        if raw.get("preset"):
            spec = TableSpec.from_preset(raw["preset"], overrides)
        else:
            top_level = {k: raw[k] for k in _RUN_KEYS if raw.get(k) is not None}
            raw["base"] = {**top_level, **raw.get("base", {}), **overrides}
            spec = TableSpec.from_dict(os.path.splitext(os.path.basename(args.config))[0], raw)
    else:
        raise ConfigError("table needs --preset or --config")
    rows = run_table(spec, jobs=args.jobs, out_dir=out_dir, progress_callback=view.progress)
    ResultStore.write_csv(os.path.join(out_dir, f"{spec.name}.csv"), RESULT_COLUMNS, rows)
    view.show_table(spec, rows)
    return EXIT_OK


def cmd_rate_study(args, out_dir: str, view: ResultsView) -> int:
    preset = get_preset(args.preset)
    base = {**preset["base"], **{k: v for k, v in _overrides(args).items() if v is not None}}
    alphas = args.alphas or preset["alphas"]
    epsilons = args.eps_list or preset["epsilons"]
    seed = args.seed if args.seed is not None else 0
    report = run_rate_study(alphas, epsilons, seed, base, jobs=args.jobs, out_dir=out_dir,
                            progress_callback=view.progress)
    ResultStore.write_csv(os.path.join(out_dir, "rate.csv"), RESULT_COLUMNS, report.rows)
    for name, points in report.curves.items():
        metric = name.split('_', 1)[1]
        ResultStore.write_csv(os.path.join(out_dir, f"rate_{name}.csv"), ["eps", metric],
                              [{"eps": e, metric: v} for e, v in points])
    ResultStore.write_json(os.path.join(out_dir, "slopes.json"), {str(a): s for a, s in report.slopes.items()})
    view.show_rate(report)
    return EXIT_OK


def cmd_selftest(args, out_dir: str, view: ResultsView) -> int:
    checks = selftest()
    view.show_checks(checks)
    return EXIT_OK if all(ok for _, ok, _ in checks) else EXIT_NUMERICAL


COMMANDS = {
    'solve-forward': cmd_solve_forward,
    'invert': cmd_invert,
    'table': cmd_table,
    'rate-study': cmd_rate_study,
    'selftest': cmd_selftest,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    out_dir = args.out or os.path.join(get_base_path(), 'results')
    setup_logging(out_dir, args.verbose)
    view = ResultsView(sys.stdout)
    try:
        return COMMANDS[args.command](args, out_dir, view)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG
    except NumericalError as e:
        logger.error(f"Numerical failure: {e}", exc_info=True)
        return EXIT_NUMERICAL
    except InversionError as e:
        logger.error(f"Run failed: {e}", exc_info=True)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
