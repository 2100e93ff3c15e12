from ...sequence_models import ArchitectureSpec
from ...services import run_train
from ..base import RunCommand


class Command(RunCommand):
    help = 'Train and evaluate a single architecture.'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--arch', required=True, help='architecture name, e.g. OdeRnnAttn')

    def run(self, **options):
        spec = ArchitectureSpec.parse(options['arch'])
        outcome = run_train(self.run_config(options), spec)
        report = outcome.report
        self.stdout.write(
            f"{spec.value}: AP {report.ap.format()}, AUROC {report.auroc.format()} "
            f"(best epoch {outcome.best_epoch}, {outcome.n_parameters} parameters)"
        )
