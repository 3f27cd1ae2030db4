from .attention import (
    cls_head_forward,
    cls_head_logits,
    description_states,
    init_cls_head,
    init_xml_head,
    semantic_label_init,
    xml_head_forward,
    xml_head_logits,
)
from .baseline import (
    MultiHeadConfig,
    bigru_states,
    init_multihead,
    multihead_baseline_forward,
    multihead_logits,
    multihead_pool_logits,
)
from .logreg import BowLogRegParams, LogRegHParams, bow_features, bow_logreg
from .training import (
    Classifier,
    LabeledSet,
    TrainHParams,
    TrainResult,
    content_mask,
    evaluate_model,
    train_classifier,
    write_metrics,
)

__all__ = [
    "BowLogRegParams",
    "LogRegHParams",
    "bow_features",
    "bow_logreg",
    "cls_head_forward",
    "cls_head_logits",
    "description_states",
    "init_cls_head",
    "init_xml_head",
    "semantic_label_init",
    "xml_head_forward",
    "xml_head_logits",
    "MultiHeadConfig",
    "bigru_states",
    "init_multihead",
    "multihead_baseline_forward",
    "multihead_logits",
    "multihead_pool_logits",
    "Classifier",
    "LabeledSet",
    "TrainHParams",
    "TrainResult",
    "content_mask",
    "evaluate_model",
    "train_classifier",
    "write_metrics",
]
