from django.contrib import admin

from .models import ArchitectureResult, BenchmarkRun, EpochRecord


class ArchitectureResultInline(admin.TabularInline):
    model = ArchitectureResult
    fields = ['architecture', 'ap', 'auroc', 'f1', 'seconds', 'error']
    readonly_fields = fields
    extra = 0
    can_delete = False


@admin.register(BenchmarkRun)
class BenchmarkRunAdmin(admin.ModelAdmin):
    list_display = ['id', 'seed', 'split_hash', 'n_test_stays', 'prevalence', 'created_at']
    list_filter = ['created_at', 'seed']
    search_fields = ['split_hash', 'output_dir']
    readonly_fields = ['created_at']
    inlines = [ArchitectureResultInline]


@admin.register(ArchitectureResult)
class ArchitectureResultAdmin(admin.ModelAdmin):
    list_display = ['architecture', 'run', 'ap', 'auroc', 'f1', 'sensitivity', 'specificity', 'seconds', 'n_parameters']
    list_filter = ['architecture', 'run__seed']
    search_fields = ['architecture', 'error']


@admin.register(EpochRecord)
class EpochRecordAdmin(admin.ModelAdmin):
    list_display = ['result', 'epoch', 'train_loss', 'val_ap']
    list_filter = ['result__architecture']
