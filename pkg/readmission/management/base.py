"""Shared flag handling for the readmission management commands."""

from pathlib import Path

from django.core.management.base import BaseCommand, CommandError

from ..archive import ArchiveError
from ..compute import ConfigurationError, NumericError
from ..conf import load_run_config
from ..ehr import CohortFormatError
from ..metrics import MetricUndefinedError
from ..training import TrainingAborted

# library errors a command reports as a failed run
COMMAND_ERRORS = (
    ConfigurationError,
    CohortFormatError,
    NumericError,
    MetricUndefinedError,
    TrainingAborted,
    ArchiveError,
    OSError,
)


class RunCommand(BaseCommand):
    """Adds ``--config``, ``--seed`` and ``--out`` and turns library errors into ``CommandError``."""

    def add_arguments(self, parser):
        parser.add_argument('--config', type=Path, help='JSON run configuration')
        parser.add_argument('--seed', type=int, help='master seed (overrides the config)')
        parser.add_argument('--out', type=Path, help='output directory (overrides the config)')

    def overrides(self, options):
        return {
            'seed': options.get('seed'),
            'out': str(options['out']) if options.get('out') is not None else None,
        }

    def run_config(self, options):
        return load_run_config(options.get('config'), self.overrides(options))

    def handle(self, *args, **options):
        try:
            return self.run(**options)
        except COMMAND_ERRORS as exc:
            raise CommandError(str(exc)) from exc

    def run(self, **options):
        raise NotImplementedError
