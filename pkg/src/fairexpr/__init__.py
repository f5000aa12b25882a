"""Expression classifiers with attribute-aware and disentangled heads,
plus the accuracy and fairness measurements used to compare them."""

from .augment import AugmentConfig, Augmenter, augment
from .config import ExperimentConfig, load_config, parse_config
from .errors import (
    ConfigError, FairExprError, ManifestError, NoSupportError, NumericError, UndefinedFairnessError,
    ValidationError,
)
from .estimator import FairExpressionClassifier
from .fairness import FairnessReport, build_report, fairness_binary, fairness_multi, per_class_recall
from .ingest import load_manifest, write_manifest
from .losses import attribute_loss, confusion_loss, expression_loss, total_loss
from .models import GradientPolicy, ModelBundle, build_bundle, load_checkpoint, save_checkpoint
from .schema import AttributeGroup, AttributeSchema, Sample, encode_attributes, raf_schema, split_deterministic
from .synth import SynthConfig, bias_audit, generate
from .trainer import PredictionRecord, TrainConfig, evaluate, probe_attributes, train

__version__ = "0.1.0"
