"""sonolab: composable ultrasound reconstruction and acquisition tooling.

Raw channel data goes in, B-mode images come out, through a stateless chain
of pure operations; containers keep data and acquisition parameters together
in one file; an entropy-driven agent picks which scan lines to acquire next.
"""

from sonolab.container import UsFile, load_file, write_file
from sonolab.core import (
    Grid,
    ParameterBag,
    Probe,
    Scan,
    TensorFrame,
    linear_probe,
    make_cartesian_grid,
    merge_parameters,
)
from sonolab.dataset import DataLoader, DatasetSpec, make_dataloader
from sonolab.errors import (
    DegenerateInputError,
    MissingParameterError,
    ParameterError,
    PipelineError,
    SchemaError,
    SonolabError,
)
from sonolab.pipeline import (
    ExecutionPlan,
    Operation,
    PatchedGrid,
    Pipeline,
    pipeline_from_config,
    run_patched,
)

__version__ = "0.1.0"

__all__ = [
    "DataLoader",
    "DatasetSpec",
    "DegenerateInputError",
    "ExecutionPlan",
    "Grid",
    "MissingParameterError",
    "Operation",
    "ParameterBag",
    "ParameterError",
    "PatchedGrid",
    "Pipeline",
    "PipelineError",
    "Probe",
    "Scan",
    "SchemaError",
    "SonolabError",
    "TensorFrame",
    "UsFile",
    "__version__",
    "linear_probe",
    "load_file",
    "make_cartesian_grid",
    "make_dataloader",
    "merge_parameters",
    "pipeline_from_config",
    "run_patched",
    "write_file",
]
