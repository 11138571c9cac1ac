from .dataset import Entry, Manifest, generate_dataset, load_entry, read_manifest, split_counts
from .distort import Distortion, distort
from .netpbm import load_mask, load_pgm, load_ppm, save_pgm, save_ppm
from .synth import Sample, SampleMeta, synthesize

__all__ = [
    "Distortion",
    "Entry",
    "Manifest",
    "Sample",
    "SampleMeta",
    "distort",
    "generate_dataset",
    "load_entry",
    "load_mask",
    "load_pgm",
    "load_ppm",
    "read_manifest",
    "save_pgm",
    "save_ppm",
    "split_counts",
    "synthesize",
]
