from pathlib import Path

from hsi.data_io import load_cube
from hsi.management.base import RunConfigCommand
from hsi.metrics import render_map
from hsi.network import load_checkpoint
from hsi.training import predict_map


class Command(RunConfigCommand):
    help = "Classify every pixel of a cube and render the map as a binary PPM image."
    required_fields = ("checkpoint", "cube")
    input_fields = ("checkpoint", "cube")

    def add_command_arguments(self, parser):
        parser.add_argument("--map", dest="map_path", help="output image (default <output-dir>/map.ppm)")

    def run(self, config, options):
        model = load_checkpoint(config["checkpoint"])
        cube = load_cube(config["cube"])
        grid = predict_map(model, cube, workers=config["threads"])
        out = Path(options.get("map_path") or Path(config["output_dir"]) / "map.ppm")
        render_map(grid, out)
        self.stdout.write(self.style.SUCCESS(f"{cube.height}x{cube.width} map written to {out}"))
