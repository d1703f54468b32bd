import json
import logging
from pathlib import Path

from django.conf import settings
from django.core.management.base import CommandError

from hsi.data_io import load_cube, load_labels
from hsi.exceptions import ConfigError, StorageError
from hsi.management.base import RunConfigCommand
from hsi.serializers import SweepRowSerializer
from hsi.training import OptimizerState, TrainConfig, sweep_training_size

logger = logging.getLogger(__name__)

DEFAULT_PERCENTS = "4.4,5,9,15"


def parse_percents(text):
    try:
        percents = [float(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise ConfigError(f"percentages must be comma-separated numbers, got {text!r}") from e
    if not percents:
        raise ConfigError("give at least one training percentage")
    return percents


class Command(RunConfigCommand):
    help = (
        "Retrain from scratch at several training-set percentages and write one OA/kappa table "
        "(sweep.json, plus one run directory per percentage)."
    )
    required_fields = ("cube", "labels")
    input_fields = ("cube", "labels")

    def add_command_arguments(self, parser):
        parser.add_argument(
            "--percents",
            default=DEFAULT_PERCENTS,
            help=f"comma-separated training percentages per class (default {DEFAULT_PERCENTS})",
        )

    def run(self, config, options):
        if config.get("split"):
            raise CommandError("[config_error] sweep draws its own splits; drop --split")
        percents = parse_percents(options.get("percents") or DEFAULT_PERCENTS)
        out_dir = Path(config["output_dir"])
        cube = load_cube(config["cube"])
        labels = load_labels(config["labels"])

        train_config = TrainConfig(
            epochs=config["epochs"],
            batch_size=config["batch_size"],
            shuffle_seed=config["split_seed"],
            split_seed=config["split_seed"],
            log_every=config["log_every"],
            workers=config["threads"],
            grad_shard=settings.SPECNET3D_GRAD_SHARD,
        )
        opt = OptimizerState(config["learning_rate"], config["momentum"], config["weight_decay"])
        rows = sweep_training_size(
            cube,
            labels,
            percents,
            train_config,
            opt,
            model_seed=config["model_seed"],
            window=config["window"],
            output_dir=out_dir,
        )
        serializer = SweepRowSerializer(data=rows, many=True)
        if not serializer.is_valid():
            raise CommandError(f"[report_invalid] {json.dumps(serializer.errors)}")

        sweep_path = out_dir / "sweep.json"
        document = {"epochs": config["epochs"], "model_seed": config["model_seed"], "rows": rows}
        try:
            sweep_path.write_text(json.dumps(document, indent=2))
        except OSError as e:
            logger.error(f"Failed to write sweep table {sweep_path}: {str(e)}")
            raise StorageError(f"cannot write {sweep_path}: {e}") from e

        self.stdout.write(f"{'Train %':>8}{'Train':>8}{'Test':>8}{'OA':>10}{'Kappa':>10}")
        for row in rows:
            kappa = "n/a" if row["kappa"] is None else f"{row['kappa']:.4f}"
            self.stdout.write(
                f"{row['train_percent']:>8g}{row['train_pixels']:>8}{row['test_pixels']:>8}"
                f"{row['overall_accuracy']:>10.4f}{kappa:>10}"
            )
        self.stdout.write(self.style.SUCCESS(f"Sweep table written to {sweep_path}"))
