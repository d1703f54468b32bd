from hsi.management.base import RunConfigCommand
from hsi.network import CLASSIFIER, ModelConfig, build_model, load_checkpoint, param_count, shape_trace


class Command(RunConfigCommand):
    help = "Print the per-stage shape trace and the per-layer parameter table."

    def add_command_arguments(self, parser):
        parser.add_argument("--bands", type=int, default=102, help="spectral depth S (default 102)")
        parser.add_argument("--classes", type=int, default=9, help="number of classes (default 9)")

    def run(self, config, options):
        if config.get("checkpoint"):
            model = load_checkpoint(config["checkpoint"])
        else:
            model = build_model(
                ModelConfig(options.get("bands", 102), options.get("classes", 9), config["window"]),
                rng_seed=config["model_seed"],
            )
        trace = shape_trace(model.config)
        self.stdout.write(f"{'Stage':<10}{'Channels x H x W x D':>24}")
        for stage, dims in trace.stages:
            self.stdout.write(f"{stage:<10}{' x '.join(map(str, dims)):>24}")
        self.stdout.write(f"{'Flatten':<10}{trace.features:>24,}")

        ledger = param_count(model)
        self.stdout.write("")
        self.stdout.write(f"{'Layer':<10}{'Parameters':>12}")
        for layer, count in ledger.per_layer.items():
            if layer != CLASSIFIER:
                self.stdout.write(f"{layer:<10}{count:>12,}")
        self.stdout.write(f"{'Total':<10}{ledger.conv_total:>12,}")
        self.stdout.write(f"{CLASSIFIER:<10}{ledger.classifier:>12,}")
        self.stdout.write(f"{'All':<10}{ledger.total:>12,}")
