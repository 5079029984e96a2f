"""Desk-scale streaming diffusion pipeline.

Frames live in a fixed-capacity FIFO "latent pile" at staggered noise
levels (one timestep per group of g consecutive frames).  Each engine
step denoises the whole pile jointly, advances every frame by one noise
decrement, pops the group that reached the clean state and pushes a
fresh group of pure noise.  A closed-form Gaussian oracle stands in for
the learned denoiser so every pipeline claim can be verified exactly;
a tiny temporal-attention network plays the role of the learned model.
"""

from .errors import ConfigError, NumericError, StreamError
from .diffusion import (
    NoiseSchedule,
    Prediction,
    add_noise,
    build_schedule,
    cm_renoise_step,
    convert_prediction,
    ddim_step,
)
from .schedule import (
    GroupTimesteps,
    ScheduleConfig,
    advance,
    group_timesteps,
    schedule_csv,
    t0_sequence,
)
from .gaussian import (
    Ar1Spec,
    GaussianPrior,
    ar1_prior,
    gaussian_posterior_denoise,
    posterior_var_diag,
    transport_to_clean,
)
from .denoisers import (
    Denoiser,
    GaussianPosteriorDenoiser,
    GaussianTransportDenoiser,
    ToyNetDenoiser,
)
from .engine import EngineState, FrameEvent, LatentPile, init_engine, run_stream, step
from .toynet import ToyNetParams, forward, grad, init_params, temporal_attention
from .distill import (
    ConsistencyWrapper,
    DistillState,
    cd_step,
    cfg_teacher,
    cm_multistep_sample,
    consistency_fn,
    distill,
    huber,
)
from .training import AdamW, GaussianSequenceSampler, train_temporal_adaptive, train_uniform
from .landmarks import (
    LandmarkSet,
    MergeTable,
    RegionTransformParams,
    apply_region_transforms,
    merge_points,
    retarget,
)
from .bench import (
    BenchReport,
    DriftReport,
    JitterReport,
    bench_pipeline,
    compare_streaming_offline,
    drift,
    jitter_ratio,
)

__version__ = "0.1.0"
