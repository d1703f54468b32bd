import json
import logging
from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError
from rest_framework import serializers

from hsi.exceptions import HsiError, StorageError
from hsi.serializers import RunConfigSerializer

logger = logging.getLogger(__name__)

FLAG_TYPES = (
    (serializers.IntegerField, int),
    (serializers.FloatField, float),
    (serializers.CharField, str),
)


def _flag_type(field):
    for field_class, flag_type in FLAG_TYPES:
        if isinstance(field, field_class):
            return flag_type
    return str


class RunConfigCommand(BaseCommand):
    """
    Exposes every RunConfig field as a flag, merges it over an optional JSON
    config file (flags win) and reports engine errors as `[code] message`.
    """

    required_fields = ()
    input_fields = ()

    def add_arguments(self, parser):
        parser.add_argument("--config", help="JSON file with run settings; flags override it")
        for name, field in RunConfigSerializer().fields.items():
            parser.add_argument(
                f"--{name.replace('_', '-')}",
                dest=name,
                type=_flag_type(field),
                default=None,
                help=RunConfigSerializer.field_help(name),
            )
        self.add_command_arguments(parser)

    def add_command_arguments(self, parser):
        pass

    def load_run_config(self, options):
        data = {}
        if options.get("config"):
            try:
                data = json.loads(Path(options["config"]).read_text())
            except (OSError, json.JSONDecodeError) as e:
                logger.error(f"Failed to read config file {options['config']}: {str(e)}")
                raise CommandError(f"[config_error] cannot read {options['config']}: {e}") from e
            if not isinstance(data, dict):
                raise CommandError(f"[config_error] {options['config']} must hold a JSON object")
        for name in RunConfigSerializer().fields:
            if options.get(name) is not None:
                data[name] = options[name]

        serializer = RunConfigSerializer(
            data=data, context={"required": self.required_fields, "inputs": self.input_fields}
        )
        if not serializer.is_valid():
            raise CommandError(f"[config_error] {json.dumps(serializer.errors)}")
        config = dict(serializer.validated_data)
        if config.get("threads") is None:
            config["threads"] = settings.SPECNET3D_THREADS
        return config

    def handle(self, *args, **options):
        try:
            return self.run(self.load_run_config(options), options)
        except HsiError as e:
            logger.error(f"{self.__module__.rsplit('.', 1)[-1]} failed: {str(e)}")
            raise CommandError(f"[{e.code}] {e}") from e
        except OSError as e:
            logger.error(f"{self.__module__.rsplit('.', 1)[-1]} failed on the filesystem: {str(e)}")
            raise CommandError(f"[{StorageError.code}] {e}") from e

    def run(self, config, options):
        raise NotImplementedError
