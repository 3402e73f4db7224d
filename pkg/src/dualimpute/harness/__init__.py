from .baselines import LogisticProbe, baseline_impute, mean_impute
from .benchmark import (
    BenchmarkReport,
    MethodResult,
    apply_masking,
    method_seed,
    run_benchmark,
)
from .config import (
    MaskingConfig,
    MaskSpecConfig,
    MethodConfig,
    RunConfig,
    build_train_config,
    load_run_config,
    resolve_curriculum,
    run_config_from_dict,
)
from .metrics import auroc, rmse_masked
from .synth import SynthSpec, synth_generate
