import os

LOGGING_LEVEL = os.environ.get("LOGGING_LEVEL", "INFO")
# the only environment variable that influences where results go
DEFAULT_OUT_DIR = os.environ.get("JDFLOW_OUT_DIR", "out")
DEFAULT_THREADS = 1
DEFAULT_MARGIN = 3.0
DEFAULT_LATTICE_POINTS = 5
