import json
from pathlib import Path

from django.conf import settings

from hsi.data_io import load_cube, load_labels, load_split, save_split
from hsi.management.base import RunConfigCommand
from hsi.metrics import write_report
from hsi.network import ModelConfig, build_model
from hsi.training import OptimizerState, TrainConfig, evaluate, train


class Command(RunConfigCommand):
    help = "Train the residual 3D CNN; writes model.ckpt.json, history.jsonl and report.json."
    required_fields = ("cube", "labels")
    input_fields = ("cube", "labels", "split")

    def add_command_arguments(self, parser):
        parser.add_argument(
            "--eval-test",
            action="store_true",
            help="record test-set overall accuracy in the history after every epoch",
        )

    def run(self, config, options):
        out_dir = Path(config["output_dir"])
        cube = load_cube(config["cube"])
        labels = load_labels(config["labels"])
        train_config = TrainConfig(
            epochs=config["epochs"],
            batch_size=config["batch_size"],
            shuffle_seed=config["split_seed"],
            per_class_train=config.get("per_class_train"),
            train_percent=config.get("train_percent"),
            split_seed=config["split_seed"],
            log_every=config["log_every"],
            workers=config["threads"],
            grad_shard=settings.SPECNET3D_GRAD_SHARD,
            evaluate_test=options.get("eval_test", False),
        )
        if config.get("split"):
            split = load_split(config["split"])
        else:
            split = train_config.make_split(labels)
            save_split(split, out_dir / "train.split.json")

        effective = {
            "learning_rate": config["learning_rate"],
            "momentum": config["momentum"],
            "weight_decay": config["weight_decay"],
            "epochs": config["epochs"],
            "batch_size": config["batch_size"],
            "window": config["window"],
            "per_class_train": config.get("per_class_train"),
            "train_percent": config.get("train_percent"),
            "model_seed": config["model_seed"],
            "split_seed": config["split_seed"],
            "threads": config["threads"],
        }
        self.stdout.write(f"Effective hyperparameters: {json.dumps(effective)}")

        model = build_model(
            ModelConfig(cube.bands, labels.num_classes, config["window"]), rng_seed=config["model_seed"]
        )
        opt = OptimizerState(config["learning_rate"], config["momentum"], config["weight_decay"])
        model, history = train(
            model,
            cube,
            labels,
            split,
            train_config,
            opt,
            checkpoint_path=out_dir / "model.ckpt.json",
            history_path=out_dir / "history.jsonl",
        )

        if len(split.test):
            matrix = evaluate(model, cube, labels, split.test, workers=config["threads"])
            report = write_report(matrix, out_dir / "report.json", history=history)
            self.stdout.write(f"Test overall accuracy {report['overall_accuracy']:.4f}, kappa {report['kappa']}")
        else:
            self.stderr.write("Split has no test pixels; report skipped")
        self.stdout.write(self.style.SUCCESS(f"Training finished, outputs in {out_dir}"))
