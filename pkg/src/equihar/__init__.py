from equihar.codec import Record, RecordStore, dump_record, load_record, record
from equihar.config import ExperimentConfig, build_experiment_config, read_config_file
from equihar.dataset import (
    AccVariant,
    DatasetConfig,
    HarSplit,
    Split,
    fetch_dataset,
    load_split,
)
from equihar.features import (
    GroupOnlyReading,
    GroupPosetRepresentation,
    MultiSensorWindow,
    RepresentationKind,
    extract,
    extract_batch,
    feature_dimension,
)
from equihar.learn import TrainedHead, fit_logreg, head_predict, score, train_head
from equihar.perturb import OodConfig, apply_draw, perturb_signals, sample_draw
from equihar.pipeline import package_version, run_benchmark, run_naturality_suite
from equihar.robustness import orbit_displacement, risk_invariance_audit
from equihar.symmetry import GroupElement, Morphism, PosetArrow, PosetNode, SensorId

__version__ = package_version()
