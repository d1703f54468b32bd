from pathlib import Path

from rest_framework import serializers
from rest_framework.fields import empty

DEFAULT_PER_CLASS_TRAIN = 200


class RunConfigSerializer(serializers.Serializer):
    """
    One experiment's settings: JSON config file values overlaid by flags.

    Context keys: `required` names fields the command cannot run without,
    `inputs` names path fields that must already exist.
    """

    PATH_FIELDS = ("cube", "labels", "split", "checkpoint")

    cube = serializers.CharField(required=False, help_text="cube header (.hsc.json)")
    labels = serializers.CharField(required=False, help_text="label grid header (.lbl.json)")
    split = serializers.CharField(required=False, help_text="split manifest (.split.json)")
    checkpoint = serializers.CharField(required=False, help_text="model checkpoint manifest (.ckpt.json)")
    per_class_train = serializers.IntegerField(
        required=False, min_value=1, help_text=f"training pixels per class (default {DEFAULT_PER_CLASS_TRAIN})"
    )
    train_percent = serializers.FloatField(
        required=False, min_value=0, max_value=100,
        help_text="percentage of each class used for training, floored, at least one pixel",
    )
    split_seed = serializers.IntegerField(default=0, help_text="seed for the split and mini-batch shuffling")
    model_seed = serializers.IntegerField(default=0, help_text="seed for weight initialization")
    learning_rate = serializers.FloatField(default=0.02, min_value=0, help_text="SGD learning rate")
    momentum = serializers.FloatField(default=0.9, min_value=0, help_text="SGD momentum")
    weight_decay = serializers.FloatField(default=0.0005, min_value=0, help_text="weight decay (biases exempt)")
    epochs = serializers.IntegerField(default=100, min_value=1, help_text="training epochs")
    batch_size = serializers.IntegerField(default=64, min_value=1, help_text="mini-batch size")
    window = serializers.IntegerField(default=7, min_value=1, help_text="odd spatial window around each pixel")
    output_dir = serializers.CharField(default="runs", help_text="directory for checkpoints, history and reports")
    threads = serializers.IntegerField(required=False, min_value=1, help_text="worker threads")
    log_every = serializers.IntegerField(default=1, min_value=1, help_text="epochs between progress log lines")

    def validate_window(self, value):
        if value % 2 == 0:
            raise serializers.ValidationError("window must be odd")
        return value

    def validate_momentum(self, value):
        if value >= 1:
            raise serializers.ValidationError("momentum must be below 1")
        return value

    def validate_train_percent(self, value):
        if value <= 0:
            raise serializers.ValidationError("train_percent must be above 0")
        return value

    def validate(self, attrs):
        for name in self.context.get("required", ()):
            if attrs.get(name) in (None, ""):
                raise serializers.ValidationError({name: "This field is required."})
        for name in self.context.get("inputs", ()):
            if attrs.get(name) and not Path(attrs[name]).exists():
                raise serializers.ValidationError({name: f"{attrs[name]} does not exist."})
        if attrs.get("per_class_train") is not None and attrs.get("train_percent") is not None:
            raise serializers.ValidationError("give either per_class_train or train_percent, not both")
        if attrs.get("per_class_train") is None and attrs.get("train_percent") is None:
            attrs["per_class_train"] = DEFAULT_PER_CLASS_TRAIN
        return attrs

    @classmethod
    def field_help(cls, name):
        field = cls().fields[name]
        if field.default is empty:
            return field.help_text
        return f"{field.help_text} (default {field.default})"


class ReportSerializer(serializers.Serializer):
    class_names = serializers.ListField(child=serializers.CharField(), allow_null=True, required=False)
    matrix = serializers.ListField(child=serializers.ListField(child=serializers.IntegerField(min_value=0)))
    total = serializers.IntegerField(min_value=0)
    overall_accuracy = serializers.FloatField(min_value=0, max_value=1)
    per_class_accuracy = serializers.ListField(
        child=serializers.FloatField(allow_null=True, min_value=0, max_value=1)
    )
    kappa = serializers.FloatField(allow_null=True, min_value=-1, max_value=1)
    history = serializers.ListField(child=serializers.DictField(), required=False)

    def validate(self, attrs):
        size = len(attrs["matrix"])
        if any(len(row) != size for row in attrs["matrix"]):
            raise serializers.ValidationError({"matrix": "matrix must be square"})
        if len(attrs["per_class_accuracy"]) != size:
            raise serializers.ValidationError({"per_class_accuracy": "one entry per class"})
        if attrs["total"] != sum(map(sum, attrs["matrix"])):
            raise serializers.ValidationError({"total": "total must equal the matrix sum"})
        return attrs


class SweepRowSerializer(serializers.Serializer):
    train_percent = serializers.FloatField(min_value=0, max_value=100)
    train_pixels = serializers.IntegerField(min_value=1)
    test_pixels = serializers.IntegerField(min_value=1)
    overall_accuracy = serializers.FloatField(min_value=0, max_value=1)
    kappa = serializers.FloatField(allow_null=True, min_value=-1, max_value=1)
