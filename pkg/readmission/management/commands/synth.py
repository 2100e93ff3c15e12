from ...services import run_synth, summarise_paths
from ..base import RunCommand


class Command(RunCommand):
    help = 'Write a synthetic cohort (stays.csv, events.csv, planted.csv) from the config\'s synthetic block.'

    def run(self, **options):
        paths = run_synth(self.run_config(options))
        self.stdout.write(summarise_paths(paths))
