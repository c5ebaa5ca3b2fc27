"""Instance-wise unlearning toolkit.

Delete individual training instances from a pre-trained classifier by
driving them to misclassification (or to corrected labels), with two
forgetting-mitigation regularizers: adversarial-example replay and
importance-weighted parameter drift penalties.
"""

from ._kernels import BACKEND as KERNEL_BACKEND
from .attack import (
    AdversarialSet,
    AttackConfig,
    generate_adversarial_set,
    load_adversarial_set,
    pgd_l2_targeted,
    save_adversarial_set,
    targeted_success_rate,
)
from .datasets import (
    Dataset,
    ForgetManifest,
    MISCLASSIFY,
    RELABEL,
    load_dataset,
    load_manifest,
    make_synthetic,
    make_synthetic_images,
    save_dataset,
    save_manifest,
    select_forget_set,
    split_remaining,
)
from .errors import (
    ArgumentError,
    DegenerateInputError,
    ManifestError,
    NumericError,
    ShapeContractError,
    UnlearnkitError,
)
from .importance import (
    ImportanceMap,
    importance_penalty,
    invert,
    load_importance_map,
    mas_importance,
    normalize_layerwise,
    save_importance_map,
)
from .models import (
    ClassifierState,
    accuracy,
    cross_entropy,
    forward,
    forward_with_activations,
    grad_input,
    grad_params,
    init_state,
    load_checkpoint,
    make_cnn_s,
    make_mlp2,
    predict,
    pretrain,
    save_checkpoint,
)
from .optim import OptimConfig, SgdMomentum
from .reports import (
    EvalReport,
    cka_linear,
    confusion_prepost,
    emit_report,
    evaluate,
    layerwise_cka,
    parse_report,
)
from .unlearn import (
    ADV,
    ADV_IMP,
    CORRECT,
    METHODS,
    NEGGRAD,
    ORACLE,
    RAWP,
    UnlearnConfig,
    UnlearnResult,
    loss_adv,
    loss_adv_imp,
    loss_cor,
    loss_ms,
    prepare_omega_bar,
    run_continual,
    run_oracle,
    run_rawp,
    run_unlearning,
)

__version__ = "0.1.0"
