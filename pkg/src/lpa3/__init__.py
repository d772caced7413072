"""Label-preserving adversarial augmentation on a small numpy autodiff stack."""
from .attack import AttackParams, AttackResult, fast_lagrangian_attack, negative_attack, adaptive_epsilon_step
from .data import DatasetDescriptor, ExampleBatch, load_dataset, mnist_subset_descriptor
from .estimators import LPA3Augmenter, LPA3Classifier
from .infotheory import (DiscreteJoint, Channel, entropy, conditional_entropy, mutual_information, conditional_mi,
                         task_nuisance_decompose, search_min_sufficient, check_theorem_conditions,
                         check_symmetric_sufficiency)
from .network import Network, init_network, load_checkpoint, save_checkpoint
from .perceptual import lpips
from .selection import TCSRecord, TCSTracker, select_low_tcs, tcs_update
from .tensor import Tensor, no_grad
from .trainer import TrainConfig, WeakAugSpec, train

__version__ = "0.1.0"
