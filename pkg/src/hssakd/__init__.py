"""Hierarchical self-supervision augmented knowledge distillation on small image classifiers."""

from .config import TrainConfig, desk_preset, load_config, parse_config_text
from .data import Dataset, fewshot_split, ingest_cifar, synth_dataset
from .distiller import (Checkpoint, MetricsLog, load_checkpoint, restore_network, save_checkpoint,
                        train_online, train_single, train_student_offline, train_teacher)
from .evaluation import evaluate_accuracy, export_embeddings, linear_probe, recall_at_k
from .joint_label import decode, encode
from .losses import LogitsBundle, Temperatures, loss_offline_student, loss_online
from .models import HierarchicalNet, build_reference_backbone, deployed_cost, tiny_resnet_spec
from .transforms import ViewBatch, get_family

__version__ = "0.1.0"

__all__ = [
    "TrainConfig", "desk_preset", "load_config", "parse_config_text",
    "Dataset", "fewshot_split", "ingest_cifar", "synth_dataset",
    "Checkpoint", "MetricsLog", "load_checkpoint", "restore_network", "save_checkpoint",
    "train_online", "train_single", "train_student_offline", "train_teacher",
    "evaluate_accuracy", "export_embeddings", "linear_probe", "recall_at_k",
    "decode", "encode",
    "LogitsBundle", "Temperatures", "loss_offline_student", "loss_online",
    "HierarchicalNet", "build_reference_backbone", "deployed_cost", "tiny_resnet_spec",
    "ViewBatch", "get_family",
]
