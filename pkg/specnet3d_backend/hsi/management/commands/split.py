from hsi.data_io import load_labels, save_split, stratified_split
from hsi.management.base import RunConfigCommand


class Command(RunConfigCommand):
    help = "Draw the stratified per-class train/test split and write a .split.json manifest."
    required_fields = ("labels", "split")
    input_fields = ("labels",)

    def run(self, config, options):
        labels = load_labels(config["labels"])
        split = stratified_split(
            labels,
            per_class_train=config.get("per_class_train"),
            seed=config["split_seed"],
            train_percent=config.get("train_percent"),
        )
        save_split(split, config["split"])

        self.stdout.write(f"{'Class':<24}{'Train':>8}{'Test':>8}")
        for cls, train_count, test_count in split.class_counts():
            self.stdout.write(f"{labels.class_name(cls):<24}{train_count:>8}{test_count:>8}")
        self.stdout.write(self.style.SUCCESS(f"Split written to {config['split']}"))
