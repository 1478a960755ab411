"""Command-line entry point: ``hssakd <subcommand> --config run.cfg``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import TrainConfig, dump_config, load_config
from .data import Dataset, fewshot_split, ingest_cifar, synth_dataset
from .distiller import (load_checkpoint, restore_network, save_checkpoint, seed_everything,
                        train_online, train_single, train_student_offline, train_teacher)
from .evaluation import evaluate_accuracy, export_embeddings, linear_probe
from .models import HierarchicalNet, deployed_cost, reference_spec
from .transforms import get_family


def load_data(cfg: TrainConfig) -> tuple[Dataset, Dataset]:
    """Train and test sets named by the config (few-shot fraction applied to train)."""
    if cfg.dataset == "synth":
        kw = dict(N=cfg.num_classes, size=cfg.synth_size, noise=cfg.synth_noise)
        train = synth_dataset(0, per_class=cfg.synth_per_class, **kw)
        test = synth_dataset(999, per_class=cfg.synth_test_per_class, split="test", **kw)
    elif cfg.dataset in ("cifar10", "cifar100"):
        if not cfg.data_dir:
            raise ValueError(f"dataset {cfg.dataset} needs data_dir")
        train = ingest_cifar(cfg.data_dir, "train")
        test = ingest_cifar(cfg.data_dir, "test")
        if train.N != cfg.num_classes:
            raise ValueError(f"{cfg.data_dir} holds {train.N} classes but num_classes={cfg.num_classes}")
    else:
        raise ValueError(f"unknown dataset {cfg.dataset!r}; expected synth, cifar10 or cifar100")
    if cfg.fewshot_fraction < 1.0:
        train = fewshot_split(train, cfg.fewshot_fraction, cfg.seed)
    return train, test


def build_from_config(cfg: TrainConfig, backbone: str | None = None, aux_task: str | None = None) -> HierarchicalNet:
    name = backbone or cfg.backbone
    kw = dict(aux_task=aux_task or cfg.aux_task, num_views=get_family(cfg.pretext).M)
    if name == "tiny_resnet":
        kw["input_size"] = cfg.synth_size if cfg.dataset == "synth" else 32
    return HierarchicalNet(reference_spec(name, cfg.num_classes, **kw))


def _config(args) -> TrainConfig:
    cfg = load_config(args.config) if args.config else TrainConfig()
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.deterministic:
        over["deterministic"] = True
    return cfg.replace(**over) if over else cfg


def _out(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _report(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def cmd_train(args) -> int:
    cfg = _config(args)
    seed_everything(cfg.seed, cfg.deterministic)
    train, test = load_data(cfg)
    out = _out(args)
    (out / "config.cfg").write_text(dump_config(cfg))
    metrics_path = out / "metrics.jsonl"
    if args.command == "train-single":
        ck, _ = train_single(build_from_config(cfg), train, cfg, test, metrics_path)
        ckpts = {"model.pt": ck}
    elif args.command == "train-teacher":
        net = build_from_config(cfg, cfg.teacher_backbone or None, "ssad")
        ck, _ = train_teacher(net, train, cfg, test, metrics_path)
        ckpts = {"teacher.pt": ck}
    elif args.command == "train-student":
        if not args.teacher_ckpt:
            raise SystemExit("train-student needs --teacher-ckpt")
        ck, _ = train_student_offline(build_from_config(cfg, aux_task="ssad"), args.teacher_ckpt,
                                      train, cfg, test, metrics_path)
        ckpts = {"student.pt": ck}
    else:
        nets = [build_from_config(cfg, aux_task="ssad") for _ in range(cfg.peers)]
        cks, _ = train_online(nets, train, cfg, test, metrics_path)
        ckpts = {f"peer{k}.pt": ck for k, ck in enumerate(cks)}
    for name, ck in ckpts.items():
        save_checkpoint(out / name, ck)
    _report({name: ck.manifest["metrics"] for name, ck in ckpts.items()})
    return 0


def cmd_eval(args) -> int:
    cfg = _config(args)
    net = restore_network(load_checkpoint(args.ckpt))
    _, test = load_data(cfg)
    res = evaluate_accuracy(net, test)
    if args.out_dir:
        res.update(export_embeddings(net, test, _out(args) / "embeddings.csv"))
    _report(res)
    return 0


def cmd_probe(args) -> int:
    cfg = _config(args)
    seed_everything(cfg.seed, cfg.deterministic)
    net = restore_network(load_checkpoint(args.ckpt))
    train, test = load_data(cfg)
    _report(linear_probe(net, train, test))
    return 0


def cmd_cost(args) -> int:
    cfg = _config(args)
    net = build_from_config(cfg, args.backbone)
    _report({"backbone": args.backbone or cfg.backbone, **deployed_cost(net)})
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hssakd", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", help="flat key = value run configuration")
        p.add_argument("--seed", type=int)
        p.add_argument("--deterministic", action="store_true")
        p.set_defaults(func=func)
        return p

    for name, help in (("train-single", "one network with auxiliary branches"),
                       ("train-teacher", "joint-label teacher"),
                       ("train-student", "offline distillation from a teacher checkpoint"),
                       ("train-online", "K peers trained together")):
        p = add(name, cmd_train, help)
        p.add_argument("--out-dir", required=True)
        p.add_argument("--teacher-ckpt")
    p = add("eval", cmd_eval, "test accuracy of a checkpoint (and embeddings with --out-dir)")
    p.add_argument("ckpt")
    p.add_argument("--out-dir")
    p = add("probe", cmd_probe, "linear probe on frozen features")
    p.add_argument("ckpt")
    p = add("cost", cmd_cost, "deployed parameter and MAC counts")
    p.add_argument("--backbone")
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
