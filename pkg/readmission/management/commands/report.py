from ...services import run_report, summarise_paths
from ..base import RunCommand


class Command(RunCommand):
    help = 'Re-render the comparison table of a stored run; with --config also the cohort summary.'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--run', type=int, help='benchmark run id (default: latest)')

    def run(self, **options):
        config = self.run_config(options) if options.get('config') else None
        paths = run_report(options.get('run'), config, options.get('out'))
        self.stdout.write(summarise_paths(paths))
