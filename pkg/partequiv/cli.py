"""Command-line interface: `partequiv train` and `partequiv analyze`."""
import math
import sys
from pathlib import Path

import click

from partequiv import __version__, configure_logging
from partequiv.constants import AnalysisName, GroupKind, KernelVariant, TaskName
from partequiv.services.analysis_service import AnalysisParams, AnalysisService, write_rows_csv
from partequiv.services.checkpoint_service import CheckpointService
from partequiv.services.config_service import ConfigService
from partequiv.services.training_service import run_training
from partequiv.utils.error_handling import PartequivError


@click.group()
@click.version_option(__version__)
def cli():
    """Partial group-equivariant CNNs."""


@cli.command('train')
@click.option('--task', type=click.Choice(TaskName.all_tasks()), help='Training task')
@click.option('--group', type=click.Choice(GroupKind.all_kinds()), help='Fiber group of the base')
@click.option('--discrete-n', type=int, help='Use the cyclic subgroup C_n instead of continuous rotations')
@click.option('--n-elems', 'n_elements', type=int, help='Maximum fiber samples per layer (N)')
@click.option('--partial', type=click.Choice(['on', 'off']), help='Learn the per-layer distributions')
@click.option('--kernel', type=click.Choice(KernelVariant.all_variants()), help='Kernel network variant')
@click.option('--epochs', type=int, help='Training epochs')
@click.option('--batch-size', type=int, help='Batch size')
@click.option('--lr-main', type=float, help='Learning rate of the network weights')
@click.option('--lr-dist', type=float, help='Learning rate of the distribution parameters')
@click.option('--warmup-epochs', type=int, help='Linear warmup length in epochs')
@click.option('--seed', type=int, help='Random seed')
@click.option('--data-dir', type=click.Path(file_okay=False),
              help='Directory holding the MNIST IDX files (default: PARTEQUIV_DATA_DIR)')
@click.option('--train-size', type=int, help='Number of training images')
@click.option('--test-size', type=int, help='Number of test images')
@click.option('--no-fallback', is_flag=True, help='Fail instead of generating procedural data')
@click.option('--out', 'out_dir', type=click.Path(file_okay=False), help='Output directory')
@click.option('--config', 'config_file', type=click.Path(exists=True, dir_okay=False),
              help='key = value file overriding the preset')
@click.option('--preset', envvar='PARTEQUIV_CONFIG', help='Preset from config.py')
@click.option('--desk', is_flag=True, help='Use the desk-scale preset')
@click.option('--resume', type=click.Path(exists=True, dir_okay=False), help='Checkpoint to continue from')
def train_command(task, group, discrete_n, n_elements, partial, kernel, epochs, batch_size, lr_main, lr_dist,
                  warmup_epochs, seed, data_dir, train_size, test_size, no_fallback, out_dir, config_file,
                  preset, desk, resume):
    """Train a Partial G-CNN and write metrics, distribution trajectories and checkpoints."""
    preset = 'desk' if desk else preset
    overrides = {
        'task': task, 'group': group, 'discrete_n': discrete_n, 'n_elements': n_elements,
        'partial': partial, 'kernel': kernel, 'epochs': epochs, 'batch_size': batch_size,
        'lr_main': lr_main, 'lr_dist': lr_dist, 'warmup_epochs': warmup_epochs, 'seed': seed,
        'data_dir': data_dir, 'train_size': train_size, 'test_size': test_size, 'out_dir': out_dir,
        'allow_fallback': False if no_fallback else None,
    }
    try:
        cfg = ConfigService.build_run_config(preset, config_file, overrides)
        configure_logging(preset, cfg.out_dir)
        click.echo(f'Training {cfg.task} on {GroupKind.get_label(cfg.group)}, '
                   f'partial={"on" if cfg.partial else "off"}, N={cfg.n_elements}')
        record = run_training(cfg, resume=resume)
    except PartequivError as e:
        click.echo(f'✗ Training failed: {e.message}', err=True)
        sys.exit(1)

    accuracy = record.final_test_accuracy
    click.echo(f'✓ Finished {len(record.epochs)} epochs'
               + (f', test accuracy {accuracy:.4f}' if accuracy is not None else ''))
    click.echo(f'  Metrics: {record.metrics_path}')
    click.echo(f'  Distributions: {record.distributions_path}')
    click.echo(f'  Checkpoint: {record.checkpoint}')


@cli.command('analyze')
@click.option('--ckpt', required=True, type=click.Path(exists=True, dir_okay=False), help='Checkpoint file')
@click.option('--what', required=True, type=click.Choice(AnalysisName.all_analyses()), help='Analysis to run')
@click.option('--w', 'w_pi', type=float, multiple=True,
              help='Transformation angle in multiples of pi (repeatable)')
@click.option('--mirror', is_flag=True, help='Compose each transformation with the mirror')
@click.option('--resamples', type=int, default=500, show_default=True, help='Resamples for the expectation test')
@click.option('--n-grid', type=int, default=512, show_default=True, help='Quadrature grid size')
@click.option('--image-size', type=int, help='Side length of the random test images')
@click.option('--seed', type=int, default=0, show_default=True, help='Random seed')
@click.option('--out', 'out_path', type=click.Path(dir_okay=False), help='CSV output path')
def analyze_command(ckpt, what, w_pi, mirror, resamples, n_grid, image_size, seed, out_path):
    """Run an equivariance analysis on a trained checkpoint and write a CSV."""
    params = AnalysisParams(resamples=resamples, n_grid=n_grid, image_size=image_size, mirror=mirror, seed=seed)
    if w_pi:
        params.w_list = tuple(w * math.pi for w in w_pi)
    out_path = Path(out_path) if out_path else Path(ckpt).parent / f'analysis-{what}.csv'
    try:
        configure_logging()
        model, _ = CheckpointService.load(ckpt)
        report = AnalysisService.run(model, what, params)
        write_rows_csv(out_path, report.header, report.rows)
    except PartequivError as e:
        click.echo(f'✗ Analysis failed: {e.message}', err=True)
        sys.exit(1)

    if report.passed:
        click.echo(f'✓ {what}: wrote {len(report.rows)} rows to {out_path}')
    else:
        click.echo(f'✗ {what}: property failed; rows written to {out_path}')
        sys.exit(1)


if __name__ == '__main__':
    cli()
