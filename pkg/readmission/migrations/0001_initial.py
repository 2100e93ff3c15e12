# Generated by Django 5.1 on 2026-10-18 09:12

import django.db.models.deletion
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='BenchmarkRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('seed', models.BigIntegerField()),
                ('split_hash', models.CharField(max_length=64)),
                ('config', models.JSONField(default=dict)),
                ('output_dir', models.CharField(max_length=500)),
                ('n_test_stays', models.IntegerField(default=0)),
                ('prevalence', models.FloatField(blank=True, null=True)),
                ('created_at', models.DateTimeField(auto_now_add=True)),
            ],
            options={
                'ordering': ['-created_at'],
                'indexes': [models.Index(fields=['split_hash'], name='readm_run_split_idx'), models.Index(fields=['created_at'], name='readm_run_created_idx')],
            },
        ),
        migrations.CreateModel(
            name='ArchitectureResult',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('architecture', models.CharField(max_length=40)),
                ('position', models.IntegerField()),
                ('ap', models.FloatField(blank=True, null=True)),
                ('ap_lo', models.FloatField(blank=True, null=True)),
                ('ap_hi', models.FloatField(blank=True, null=True)),
                ('auroc', models.FloatField(blank=True, null=True)),
                ('auroc_lo', models.FloatField(blank=True, null=True)),
                ('auroc_hi', models.FloatField(blank=True, null=True)),
                ('f1', models.FloatField(blank=True, null=True)),
                ('f1_lo', models.FloatField(blank=True, null=True)),
                ('f1_hi', models.FloatField(blank=True, null=True)),
                ('sensitivity', models.FloatField(blank=True, null=True)),
                ('sensitivity_lo', models.FloatField(blank=True, null=True)),
                ('sensitivity_hi', models.FloatField(blank=True, null=True)),
                ('specificity', models.FloatField(blank=True, null=True)),
                ('specificity_lo', models.FloatField(blank=True, null=True)),
                ('specificity_hi', models.FloatField(blank=True, null=True)),
                ('seconds', models.FloatField(default=0.0)),
                ('n_parameters', models.IntegerField(default=0)),
                ('best_epoch', models.IntegerField(default=0)),
                ('error', models.TextField(blank=True)),
                ('run', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='results', to='readmission.benchmarkrun')),
            ],
            options={
                'ordering': ['run', 'position'],
                'indexes': [models.Index(fields=['run', 'position'], name='readm_result_run_idx')],
                'unique_together': {('run', 'architecture')},
            },
        ),
        migrations.CreateModel(
            name='EpochRecord',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('epoch', models.IntegerField()),
                ('train_loss', models.FloatField()),
                ('val_ap', models.FloatField(blank=True, null=True)),
                ('result', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='epochs', to='readmission.architectureresult')),
            ],
            options={
                'ordering': ['result', 'epoch'],
                'unique_together': {('result', 'epoch')},
            },
        ),
    ]
