import json
from pathlib import Path

from django.core.management.base import CommandError

from hsi.data_io import load_cube, load_labels, load_split
from hsi.management.base import RunConfigCommand
from hsi.metrics import write_report
from hsi.network import load_checkpoint
from hsi.serializers import ReportSerializer
from hsi.training import evaluate


class Command(RunConfigCommand):
    help = "Evaluate a checkpoint on the split's test (or train) pixels and write a JSON report."
    required_fields = ("checkpoint", "cube", "labels", "split")
    input_fields = ("checkpoint", "cube", "labels", "split")

    def add_command_arguments(self, parser):
        parser.add_argument("--pixels", choices=("test", "train"), default="test", help="pixel set to evaluate (default test)")
        parser.add_argument("--report", help="report path (default <output-dir>/eval_report.json)")

    def run(self, config, options):
        model = load_checkpoint(config["checkpoint"])
        cube = load_cube(config["cube"])
        labels = load_labels(config["labels"])
        split = load_split(config["split"])
        pixels = split.test if options.get("pixels", "test") == "test" else split.train

        matrix = evaluate(model, cube, labels, pixels, workers=config["threads"])
        report_path = Path(options.get("report") or Path(config["output_dir"]) / "eval_report.json")
        report = write_report(matrix, report_path)
        serializer = ReportSerializer(data=report)
        if not serializer.is_valid():
            raise CommandError(f"[report_invalid] {json.dumps(serializer.errors)}")

        self.stdout.write(f"Overall accuracy {report['overall_accuracy']:.4f}")
        self.stdout.write(f"Kappa {report['kappa']}")
        for cls, accuracy in enumerate(report["per_class_accuracy"], start=1):
            name = labels.class_name(cls) if cls <= labels.num_classes else f"Class {cls}"
            shown = "undefined" if accuracy is None else f"{accuracy:.4f}"
            self.stdout.write(f"{name:<24}{shown:>10}")
        self.stdout.write(self.style.SUCCESS(f"Report written to {report_path}"))
