"""shapevo: evolving 3D shapes as implicit-surface computation graphs."""

from .graph import (
    AffineTransform,
    CsgOp,
    GraphError,
    GraphParseError,
    InvalidParameterError,
    Node,
    ShapeGraph,
    compose,
    deserialize,
    evaluate,
    evaluate_batch,
    make_primitive,
    node_count,
    random_primitive,
    serialize,
    transform,
)
from .geometry import (
    IncompatibleGridError,
    TriangleMesh,
    Verdict,
    VoxelGrid,
    classify_trivial,
    export_obj,
    iou,
    marching_cubes,
    voxelize,
)
from .render import (
    RenderSample,
    ViewSpec,
    read_pfm,
    render,
    render_shape_dataset,
    sample_view,
    write_pfm,
    write_png,
)
from .fitness import (
    EvaluatorError,
    ExternalEvaluator,
    FitnessEvaluator,
    IoUEvaluator,
    NormalMetrics,
    TargetSpec,
    iou_fitness,
    load_target,
    normal_metrics,
)
from .evolution import (
    EvolutionConfig,
    EvolutionResult,
    Individual,
    Population,
    enforce_resource_cap,
    evolve,
    init_population,
    propagate_fitness,
    select,
    spawn_children,
)
from .rand import derive_rng, make_rng

__version__ = "0.1.0"
