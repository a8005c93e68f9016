"""episird: dynamic SIR(D) fitting, forecasting and clustering for
regional daily case-count data."""

from .sird_core import (
    CompartmentState,
    IncrementSeries,
    SirdParams,
    Trajectory,
    UndefinedReproductionNumber,
    daily_increments,
    derivative,
    integrate,
    r0_of,
)
from .ingest import (
    CleanReport,
    IngestError,
    RegionSeries,
    clean,
    load_populations,
    observed_increments,
    parse_input,
)
from .estimation import (
    EstimateSeries,
    FitConfig,
    ParamGrid,
    fit_region,
    fit_window,
    robust_r0,
    smooth_series,
    window_rss,
)
from .prediction import (
    BandUnavailable,
    ErrorDistribution,
    Forecast,
    PointForecast,
    band,
    forecast,
    long_term,
    one_step_errors,
    predict,
)
from .clustering import (
    AlignedSeriesMatrix,
    Dendrogram,
    align,
    cut,
    ward_cluster,
)

__version__ = "0.1.0"
