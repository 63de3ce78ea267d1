"""命令行入口：gen-data / train / eval / sweep / bias

退出码：0 成功；2 未知参数或配置错误；1 运行时失败。
"""

import argparse
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from gmvq import __version__
from gmvq.core.errors import ConfigError, DivergenceError, GMVQError
from gmvq.models.training import ModelConfig
from gmvq.services.config_service import build_config, load_model_config
from gmvq.utils.logger import get_logger

logger = get_logger(__name__)


def _float_list(text: str) -> List[float]:
    try:
        return [float(item) for item in text.split(",") if item.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"需要逗号分隔的数字: {text}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gmvq", description="GM-VQ 高斯混合向量量化工具")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="生成合成高斯混合数据集")
    gen.add_argument("--clusters", type=int, default=16, help="分量数 K")
    gen.add_argument("--dim", type=int, default=64, help="维度 D")
    gen.add_argument("--n", type=int, default=4096, help="样本数 N")
    gen.add_argument("--spread", type=float, default=0.1, help="分量内标准差")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--no-labels", action="store_true", help="不写标签块")
    gen.add_argument("--out", required=True, type=Path, help="输出数据集文件")

    train = sub.add_parser("train", help="训练模型，输出 metrics.csv 与检查点")
    train.add_argument("--config", type=Path, help="key = value 配置文件（缺省使用默认值）")
    train.add_argument("--data", required=True, type=Path)
    train.add_argument("--out", required=True, type=Path, help="运行目录")
    train.add_argument("--seed", type=int, help="覆盖配置中的 seed")
    train.add_argument("--quantizer", choices=["gmvq", "vqvae_ste", "stochastic_vq"], help="覆盖量化器类型")
    train.add_argument("--epochs", type=int, help="覆盖 epoch 数")

    ev = sub.add_parser("eval", help="确定性评估检查点（不修改检查点）")
    ev.add_argument("--checkpoint", required=True, type=Path)
    ev.add_argument("--data", required=True, type=Path)
    ev.add_argument("--batch-size", type=int)

    sweep = sub.add_parser("sweep", help="β / γ 网格扫描")
    sweep.add_argument("--config", type=Path)
    sweep.add_argument("--data", required=True, type=Path)
    sweep.add_argument("--out", required=True, type=Path)
    sweep.add_argument("--betas", type=_float_list, default=[0.5, 1.0, 2.0, 4.0])
    sweep.add_argument("--gammas", type=_float_list, default=[0.01, 0.1, 1.0])
    sweep.add_argument("--seeds", type=int, default=1, help="每个单元的 seed 数（从配置 seed 起连续）")

    bias = sub.add_parser("bias", help="Gumbel-Softmax 梯度偏差与熵的相关实验")
    bias.add_argument("--seeds", type=int, default=20, help="打分网络初始化次数")
    bias.add_argument("--repeats", type=int, default=50)
    bias.add_argument("--actions", type=int, default=10)
    bias.add_argument("--grid", type=int, default=10, help="熵网格点数")
    bias.add_argument("--estimator-tau", type=float, default=0.5)
    bias.add_argument("--metric", choices=["absolute", "relative"], default="relative")
    bias.add_argument("--base-seed", type=int, default=0)
    bias.add_argument("--out", required=True, type=Path)
    return parser


def _load_config(path: Optional[Path], overrides: dict) -> ModelConfig:
    if path is None:
        return build_config({}, overrides)
    return load_model_config(path, overrides)


def _check_dims(config: ModelConfig, dataset) -> None:
    if dataset.dim != config.input_dim:
        raise ConfigError(f"配置 input_dim={config.input_dim} 与数据维度 {dataset.dim} 不一致")


def cmd_gen_data(args) -> int:
    from gmvq.services.data_service import Dataset, make_synthetic_dataset, save_dataset

    dataset = make_synthetic_dataset(args.clusters, args.dim, args.n, spread=args.spread, seed=args.seed)
    if args.no_labels:
        dataset = Dataset(data=dataset.data)
    save_dataset(dataset, args.out)
    return 0


def cmd_train(args) -> int:
    from gmvq.services.data_service import load_dataset
    from gmvq.services.training_service import TrainingService

    config = _load_config(args.config, {"seed": args.seed, "quantizer": args.quantizer, "epochs": args.epochs})
    dataset = load_dataset(args.data)
    _check_dims(config, dataset)
    service = TrainingService(config)
    try:
        service.train(dataset)
    except DivergenceError as e:
        # 回退到最后一个完整 epoch 的参数，保留已记录的指标
        if e.last_good_state is not None:
            service.model.load_state_dict(e.last_good_state)
        metrics_path, checkpoint_path = service.save(args.out)
        logger.error(f"训练发散，已保存第 {len(service.history)} 个 epoch 后的状态: {e}")
        print(f"错误: {e}\n{metrics_path}\n{checkpoint_path}", file=sys.stderr)
        return 1
    metrics_path, checkpoint_path = service.save(args.out)
    print(f"{metrics_path}\n{checkpoint_path}")
    return 0


def cmd_eval(args) -> int:
    from gmvq.services.checkpoint_service import load_checkpoint
    from gmvq.services.data_service import load_dataset
    from gmvq.services.training_service import evaluate

    model = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.data)
    _check_dims(model.config, dataset)
    result = evaluate(model, dataset, args.batch_size)
    print(f"mse,perplexity,codes_used\n{result.mse!r},{result.perplexity!r},{result.codes_used}")
    return 0


def cmd_sweep(args) -> int:
    from gmvq.services.data_service import load_dataset
    from gmvq.services.sweep_service import run_sweep

    config = _load_config(args.config, {})
    dataset = load_dataset(args.data)
    _check_dims(config, dataset)
    seeds = [config.seed + i for i in range(args.seeds)]
    summary = run_sweep(config, dataset, args.out, betas=args.betas, gammas=args.gammas, seeds=seeds)
    for trend in summary.trends:
        print(f"gamma={trend.gamma:g} seed={trend.seed} spearman(beta, perplexity)={trend.rho_perplexity}")
    return 0


def cmd_bias(args) -> int:
    from gmvq.services.bias_experiment import run_bias_sweep, summary_line, write_bias_results

    result = run_bias_sweep(
        num_actions=args.actions,
        seeds=args.seeds,
        repeats=args.repeats,
        grid_points=args.grid,
        estimator_tau=args.estimator_tau,
        bias_metric=args.metric,
        base_seed=args.base_seed,
    )
    write_bias_results(result, args.out)
    print(summary_line(result))
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "bias": cmd_bias,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """主函数"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        logger.error(f"配置错误: {e}")
        print(f"错误: {e}", file=sys.stderr)
        return 2
    except (GMVQError, OSError, ValueError) as e:
        logger.error(f"{args.command} 失败: {e}")
        print(f"错误: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
