from ...services import run_benchmark, summarise_paths
from ..base import RunCommand


class Command(RunCommand):
    help = 'Train every requested architecture on one split and write the comparison table.'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument(
            '--arch',
            action='append',
            dest='architectures',
            help='architecture to include (repeatable); defaults to the config list or all of them',
        )
        parser.add_argument('--jobs', type=int, help='parallel worker slots (default 1)')

    def overrides(self, options):
        return {
            **super().overrides(options),
            'architectures': options.get('architectures'),
            'jobs': options.get('jobs'),
        }

    def run(self, **options):
        report = run_benchmark(self.run_config(options))
        aborted = [r.architecture for r in report.results if not r.succeeded]
        self.stdout.write(f"benchmark run {report.run.pk} (split {report.run.split_hash})")
        self.stdout.write(summarise_paths(report.paths))
        if aborted:
            self.stderr.write(f"aborted: {', '.join(aborted)}")
