from ...services import query_stay, run_interpret, summarise_paths
from ..base import RunCommand


class Command(RunCommand):
    help = 'Bayes-by-Backprop training and interpretation tables; --stay-id queries a stored posterior.'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--stay-id', help='print one stay\'s risk with its 95%% credible interval')

    def run(self, **options):
        config = self.run_config(options)
        stay_id = options.get('stay_id')
        if stay_id:
            mean, lo, hi = query_stay(config, stay_id)
            self.stdout.write(f"{stay_id}: risk {mean:.3f} [{lo:.3f}, {hi:.3f}]")
            return
        report = run_interpret(config)
        self.stdout.write(summarise_paths(report.paths))
        if report.planted_recovered is not None:
            self.stdout.write(f"planted codes in the top ranking: {report.planted_recovered}")
