import argparse
import logging
import os
import sys
import time
from typing import List, Optional

from dotenv import load_dotenv

# Add the project root to Python path
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from database.db_manager import DatabaseManager
from frechet.errors import ConfigError, FrechetError, ModelChecksumError
from handlers.report_handlers import ReportHandlers
from handlers.task_handlers import TaskHandlers
from utils.config_loader import WITNESS_NAMES, RunConfig, TaskSpec, load_config
from utils.operator_builder import build_all
from utils.report_formatter import ReportFormatter

# Load environment variables
load_dotenv()

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_TASK_FAILED = 1
EXIT_CONFIG = 2
EXIT_IO = 3


def configure_logging():
    """File and console logging, level from LOG_LEVEL."""
    log_file = os.getenv('FRECHET_LOG_FILE', 'logs/frechet.log')
    directory = os.path.dirname(log_file)
    if directory:
        os.makedirs(directory, exist_ok=True)
    logging.basicConfig(
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        level=getattr(logging, os.getenv('LOG_LEVEL', 'INFO').upper(), logging.INFO),
        handlers=[
            logging.FileHandler(log_file, encoding='utf-8'),
            logging.StreamHandler()
        ]
    )


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', required=True, help='RunConfig JSON file')
    common.add_argument('--out', help='report directory (overrides the config)')
    common.add_argument('--format', choices=('json', 'csv'), help='report format (overrides the config)')
    common.add_argument('--seed', type=int, help='run seed (overrides the config)')
    common.add_argument('--tolerance', type=float, help='run tolerance (overrides the config)')

    parser = argparse.ArgumentParser(prog='frechet', description='Graded Frechet spaces and tame operators toolkit')
    commands = parser.add_subparsers(dest='command', required=True)

    model = commands.add_parser('model', help='model store')
    model_actions = model.add_subparsers(dest='action', required=True)
    model_actions.add_parser('build', parents=[common], help='build and store models')
    show = model_actions.add_parser('show', help='rebuild a stored model and verify its checksums')
    show.add_argument('model_id')

    tame = commands.add_parser('tame', help='tameness certificates and scans')
    tame_actions = tame.add_subparsers(dest='action', required=True)
    tame_actions.add_parser('certify', parents=[common], help='run certify tasks')
    tame_actions.add_parser('scan', parents=[common], help='run scan tasks')

    commands.add_parser('norm', parents=[common], help='run norm tasks')
    commands.add_parser('metric', parents=[common], help='run metric tasks')

    palette = commands.add_parser('palette', help='palette checks')
    palette.add_subparsers(dest='action', required=True).add_parser('check', parents=[common], help='run palette tasks')

    witness = commands.add_parser('witness', parents=[common], help='run witness tasks of one kind')
    witness.add_argument('name', choices=WITNESS_NAMES)

    commands.add_parser('run', parents=[common], help='run every task')

    report = commands.add_parser('report', help='stored runs')
    report.add_argument('--run', dest='run_id', help='print the report lines of one run')
    report.add_argument('--limit', type=int, default=20)
    return parser


def select_tasks(config: RunConfig, args) -> List[TaskSpec]:
    """Tasks of the config that the command asks for."""
    if args.command == 'run':
        return list(config.tasks)
    if args.command == 'tame':
        wanted = args.action
    elif args.command == 'palette':
        wanted = 'palette'
    else:
        wanted = args.command
    tasks = [task for task in config.tasks if task.type == wanted]
    if args.command == 'witness':
        tasks = [task for task in tasks if task.params.get('name') == args.name]
    return tasks


def build_models(config: RunConfig) -> int:
    models, _ = build_all(config)
    db = DatabaseManager()
    db.init_db()
    for spec in config.models:
        model = models[spec.id]
        db.save_model(spec, model)
        checksums = model.checksums()
        print(f"📐 {spec.id} ({spec.kind}): dim={model.dim} N={model.n_max} matrices={checksums['matrices'][:16]}")
    return EXIT_OK


def show_model(model_id: str) -> int:
    db = DatabaseManager()
    db.init_db()
    try:
        model = db.load_model(model_id)
    except ModelChecksumError as e:
        logger.error(str(e))
        print(f"❌ {e}")
        return EXIT_IO
    if model is None:
        print(f"❌ No stored model {model_id}")
        return EXIT_TASK_FAILED
    checksums = model.checksums()
    print(f"📐 {model_id}: dim={model.dim} N={model.n_max} grid={checksums['grid'][:16]} matrices={checksums['matrices'][:16]}")
    return EXIT_OK


def run_tasks(config: RunConfig, tasks: List[TaskSpec], out_dir: str, report_format: str) -> int:
    formatter = ReportFormatter()
    started = time.perf_counter()
    models, operators = build_all(config)
    results = TaskHandlers(config, models, operators).run_all(tasks)
    exit_code = EXIT_OK if all(result.met for result in results) else EXIT_TASK_FAILED

    try:
        paths = formatter.write(results, out_dir, report_format)
    except OSError as e:
        logger.error(str(e))
        return EXIT_IO
    wall_time = time.perf_counter() - started

    ReportHandlers().record_run(config.checksum, exit_code, wall_time, formatter.json_lines(results))
    print(formatter.summary(results, exit_code, wall_time))
    for path in paths:
        print(f"📄 {path}")
    logger.info(f"Run finished: {len(results)} tasks, exit code {exit_code}")
    return exit_code


def show_reports(args) -> int:
    handlers = ReportHandlers()
    if args.run_id is None:
        print(handlers.list_runs(args.limit))
        return EXIT_OK
    lines = handlers.show_run(args.run_id)
    if lines is None:
        print(f"❌ No stored run {args.run_id}")
        return EXIT_TASK_FAILED
    for line in lines:
        print(line)
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, run the command and return the exit code."""
    args = build_parser().parse_args(argv)
    configure_logging()

    if args.command == 'report':
        return show_reports(args)
    if args.command == 'model' and args.action == 'show':
        return show_model(args.model_id)

    try:
        config = load_config(args.config, args.seed, args.tolerance)
    except ConfigError as e:
        for error in e.errors:
            print(f"❌ {error}")
        return EXIT_CONFIG

    try:
        if args.command == 'model':
            return build_models(config)
        out_dir = args.out or config.output_dir
        report_format = args.format or config.format
        return run_tasks(config, select_tasks(config, args), out_dir, report_format)
    except OSError as e:
        logger.error(f"IO error: {e}")
        return EXIT_IO
    except (FrechetError, ValueError, KeyError) as e:
        logger.error(f"Could not build models or operators: {e}")
        print(f"❌ {e}")
        return EXIT_CONFIG


if __name__ == '__main__':
    sys.exit(main())
