from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .classifier import (ClassifierConfig, ClassifierHead, RelationInput, classifier_loss_and_grad,
                         train_relation_classifier)
from .ct import (NEGATIVE, POSITIVE, CtBatch, CtConfig, CtResult, GraphEmbedding, TrainingDiverged,
                 ct_batch_loss_and_grad, ct_loss, mean_ct_loss, sample_ct_batch, train_ct)
from .model import EncoderParams, NodeEmbeddings, TrainedEncoder, encode_nodes, init_params, pooling_weights
from .structural import StructuralEncoder, structural_encode
from .vocab import PAD, UNK, Vocabulary, build_vocab

__all__ = [
    "CheckpointError", "load_checkpoint", "save_checkpoint", "ClassifierConfig", "ClassifierHead",
    "RelationInput", "classifier_loss_and_grad", "train_relation_classifier", "NEGATIVE", "POSITIVE",
    "CtBatch", "CtConfig", "CtResult", "GraphEmbedding", "TrainingDiverged", "ct_batch_loss_and_grad",
    "ct_loss", "mean_ct_loss", "sample_ct_batch", "train_ct", "EncoderParams", "NodeEmbeddings",
    "TrainedEncoder", "encode_nodes", "init_params", "pooling_weights", "StructuralEncoder",
    "structural_encode", "PAD", "UNK", "Vocabulary", "build_vocab",
]
