import math

from django.db import models

from .metrics import METRICS, Interval


def _nullable(value):
    """SQLite cannot store NaN; an undefined metric is kept as NULL."""
    if value is None:
        return None
    value = float(value)
    return None if math.isnan(value) else value


class BenchmarkRun(models.Model):
    """One benchmark invocation: a cohort, a split and a list of architectures."""

    seed = models.BigIntegerField()
    split_hash = models.CharField(max_length=64)
    config = models.JSONField(default=dict)
    output_dir = models.CharField(max_length=500)
    n_test_stays = models.IntegerField(default=0)
    prevalence = models.FloatField(null=True, blank=True)  # positives among test stays
    created_at = models.DateTimeField(auto_now_add=True)

    class Meta:
        ordering = ['-created_at']
        indexes = [
            models.Index(fields=['split_hash'], name='readm_run_split_idx'),
            models.Index(fields=['created_at'], name='readm_run_created_idx'),
        ]

    def __str__(self):
        return f"run {self.pk} (seed {self.seed}, split {self.split_hash[:12]})"


class ArchitectureResult(models.Model):
    """Test-split metrics of one architecture within a run."""

    run = models.ForeignKey(BenchmarkRun, on_delete=models.CASCADE, related_name='results')
    architecture = models.CharField(max_length=40)
    position = models.IntegerField()  # 0-based order of the requested architectures
    ap = models.FloatField(null=True, blank=True)
    ap_lo = models.FloatField(null=True, blank=True)
    ap_hi = models.FloatField(null=True, blank=True)
    auroc = models.FloatField(null=True, blank=True)
    auroc_lo = models.FloatField(null=True, blank=True)
    auroc_hi = models.FloatField(null=True, blank=True)
    f1 = models.FloatField(null=True, blank=True)
    f1_lo = models.FloatField(null=True, blank=True)
    f1_hi = models.FloatField(null=True, blank=True)
    sensitivity = models.FloatField(null=True, blank=True)
    sensitivity_lo = models.FloatField(null=True, blank=True)
    sensitivity_hi = models.FloatField(null=True, blank=True)
    specificity = models.FloatField(null=True, blank=True)
    specificity_lo = models.FloatField(null=True, blank=True)
    specificity_hi = models.FloatField(null=True, blank=True)
    seconds = models.FloatField(default=0.0)
    n_parameters = models.IntegerField(default=0)
    best_epoch = models.IntegerField(default=0)
    error = models.TextField(blank=True)

    class Meta:
        ordering = ['run', 'position']
        unique_together = [['run', 'architecture']]
        indexes = [
            models.Index(fields=['run', 'position'], name='readm_result_run_idx'),
        ]

    def __str__(self):
        if self.error:
            return f"{self.architecture} (aborted)"
        return f"{self.architecture} (AP {self.ap:.3f})"

    @property
    def succeeded(self) -> bool:
        return not self.error

    def interval(self, metric: str) -> Interval | None:
        point = getattr(self, metric)
        if point is None:
            return None
        return Interval(point, getattr(self, f"{metric}_lo"), getattr(self, f"{metric}_hi"))

    def set_report(self, report) -> None:
        for name in METRICS:
            interval = getattr(report, name)
            setattr(self, name, _nullable(interval.point))
            setattr(self, f"{name}_lo", _nullable(interval.lo))
            setattr(self, f"{name}_hi", _nullable(interval.hi))


class EpochRecord(models.Model):
    """Per-epoch training log of a result."""

    result = models.ForeignKey(ArchitectureResult, on_delete=models.CASCADE, related_name='epochs')
    epoch = models.IntegerField()  # 1-based
    train_loss = models.FloatField()
    val_ap = models.FloatField(null=True, blank=True)

    class Meta:
        ordering = ['result', 'epoch']
        unique_together = [['result', 'epoch']]

    def __str__(self):
        return f"epoch {self.epoch} (loss {self.train_loss:.4f})"

    @classmethod
    def from_log(cls, result, log):
        return cls(result=result, epoch=log.epoch, train_loss=log.train_loss, val_ap=_nullable(log.val_ap))
