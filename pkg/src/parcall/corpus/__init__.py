from parcall.corpus.cases import BenchmarkCase, case_names, data_dir, load_all, load_case
from parcall.corpus.generate import generate_random_plan, synthetic_manifest

__all__ = [
    "BenchmarkCase",
    "case_names",
    "data_dir",
    "generate_random_plan",
    "load_all",
    "load_case",
    "synthetic_manifest",
]
