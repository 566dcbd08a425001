"""
命令行入口
子命令: analyze / patch / verify / bench / footprint

退出码:
    0 成功
    2 输入错误（文件缺失、格式错误、配置错误）
    3 --strict 模式下存在无法打补丁的 ecall
    4 差分验证失败
    5 补丁生成失败（运行时代码块无法放置或规划结果内部不一致）
"""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import yaml

from src.core.errors import CodegenError, ConfigError, ImageError, RvPatchError
from src.core.logger import DEBUG, Logger, setup_default_logger
from src.core.settings import Settings, load_settings
from src.corpus.generator import CorpusSpec, generate
from src.hooks.groups import HookSet, get_hooks_for_groups, initialize_hook_groups
from src.patcher.codegen import Blob, PatchArtifacts, RuntimeDirectory, build_runtime
from src.patcher.image import CodeImage, load_elf_text, load_raw, write_patched_image
from src.patcher.planner import PatchKind, Plan, plan
from src.verify.bench import bench
from src.verify.differential import MODES, differential_run
from src.verify.footprint import footprint_compare, models_from_settings


EXIT_OK = 0
EXIT_INPUT = 2
EXIT_STRICT = 3
EXIT_VERIFY = 4
EXIT_CODEGEN = 5

BLOB_FILES = {
    "entry_point": "entry_point.bin",
    "trampoline": "trampoline.bin",
    "relocated_table": "relocated_table.bin",
    "bitmap": "bitmap.bin",
}
PATCHED_TEXT = "patched_text.bin"
ORIGINAL_TEXT = "original_text.bin"
METADATA = "metadata.json"
PLAN = "plan.json"
ANNOTATIONS = "annotations.json"


def _int(text: str) -> int:
    """接受十进制或 0x 前缀的十六进制"""
    return int(text, 0)


def _dumps(data: Any) -> str:
    return json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False)


def _emit(args: argparse.Namespace, report: dict, text: str) -> None:
    print(_dumps(report) if args.format == "json" else text)


def _write_json(path: Path, data: Any) -> None:
    path.write_text(_dumps(data) + "\n", encoding="utf-8")


class LoadedInput:
    def __init__(self, image: CodeImage, entry: int, rvc: bool, annotations: Optional[dict] = None):
        self.image = image
        self.entry = entry
        self.rvc = rvc
        self.annotations = annotations


def load_input(args: argparse.Namespace, settings: Settings) -> LoadedInput:
    """
    按 --kind 读取输入

    异常:
        ImageError / OSError / ConfigError: 输入无法加载
    """
    if not args.input:
        raise ImageError("需要 --input")
    path = Path(args.input)
    if args.kind == "raw":
        if args.base is None:
            raise ImageError("raw 输入必须指定 --base")
        image = load_raw(path.read_bytes(), args.base)
    elif args.kind == "elf":
        if args.base is not None:
            raise ImageError("--base 只能用于 raw 输入")
        image = load_elf_text(path.read_bytes())
    else:
        try:
            document = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as e:
            raise ImageError(f"语料规格解析失败: {e}") from e
        if not isinstance(document, dict):
            raise ImageError("语料规格必须是字典")
        if args.seed is not None:
            document["seed"] = args.seed
        if args.no_rvc:
            document["rvc_enabled"] = False
        program = generate(CorpusSpec.from_dict(document))
        return LoadedInput(program.image, program.entry, program.rvc, program.to_dict())

    entry = image.base if args.entry is None else args.entry
    return LoadedInput(image, entry, settings.rvc, None)


def _plan(loaded: LoadedInput, args: argparse.Namespace) -> Plan:
    return plan(loaded.image, rvc=loaded.rvc, runtime_base=args.placement)


def _hooks(args: argparse.Namespace, settings: Settings) -> HookSet:
    if not args.hooks:
        return HookSet.passthrough()
    initialize_hook_groups(settings.hook_config)
    return get_hooks_for_groups([g.strip() for g in args.hooks.split(",") if g.strip()])


# ---------------------------------------------------------------------------
# 子命令
# ---------------------------------------------------------------------------

def cmd_analyze(args: argparse.Namespace, settings: Settings) -> int:
    """扫描 ecall、计算窗口并给出补丁类型分布"""
    loaded = load_input(args, settings)
    result = _plan(loaded, args)
    kinds = {p.site.address: p.kind.value for p in result.patches}
    reasons = {u.site.address: u.reason for u in result.unpatchable}

    sites = []
    for site in result.analysis.site_reports():
        site["kind"] = kinds.get(site["address"], "UNPATCHABLE")
        if site["address"] in reasons:
            site["reason"] = reasons[site["address"]]
        sites.append(site)

    report = {
        "image": loaded.image.describe(),
        "rvc": loaded.rvc,
        "sites": sites,
        "unpatchable": [u.to_dict() for u in result.unpatchable],
        "distribution": result.distribution(),
    }
    lines = [f"{len(sites)} 个 ecall"]
    for site in sites:
        number = site["syscall_number"]
        lines.append(f"  0x{site['address']:x}  {site['kind']:<11}  窗口 {site['window']['usable_bytes']:>3} B  "
                     f"a7={'?' if number is None else number}"
                     + (f"  ({site['reason']})" if "reason" in site else ""))
    for name, row in report["distribution"].items():
        lines.append(f"  {name:<11} {row['count']:>5}  {row['percent']:6.2f}%")
    _emit(args, report, "\n".join(lines))
    return EXIT_OK


def cmd_patch(args: argparse.Namespace, settings: Settings) -> int:
    """规划并生成补丁，把产物写入 --out 目录"""
    logger = Logger.get_logger("CLI")
    loaded = load_input(args, settings)
    result = _plan(loaded, args)
    if args.strict and result.unpatchable:
        for u in result.unpatchable:
            logger.error(f"0x{u.site.address:x} 无法打补丁: {u.reason}")
        return EXIT_STRICT

    artifacts = build_runtime(result, loaded.image, args.placement)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    (out / ORIGINAL_TEXT).write_bytes(loaded.image.data)
    (out / PATCHED_TEXT).write_bytes(write_patched_image(loaded.image, artifacts))
    for name, blob in artifacts.blobs().items():
        (out / BLOB_FILES[name]).write_bytes(blob.data)

    metadata = artifacts.to_metadata(loaded.image)
    metadata["entry"] = loaded.entry
    metadata["unpatchable"] = [u.to_dict() for u in result.unpatchable]
    _write_json(out / METADATA, metadata)
    _write_json(out / PLAN, result.to_dict())
    if loaded.annotations is not None:
        _write_json(out / ANNOTATIONS, loaded.annotations)

    logger.info(f"已写出 {len(result.patches)} 个补丁到 {out}")
    summary = {
        "out": str(out),
        "patches": len(result.patches),
        "unpatchable": len(result.unpatchable),
        "distribution": result.distribution(),
        "footprint": artifacts.footprint.to_dict() if artifacts.footprint else None,
    }
    _emit(args, summary, f"{len(result.patches)} 个补丁，{len(result.unpatchable)} 个无法打补丁，输出目录 {out}")
    return EXIT_OK


def load_artifacts(directory: Path) -> Tuple[CodeImage, PatchArtifacts, int]:
    """
    从 patch 子命令的输出目录重建原始镜像和补丁产物

    补丁后的代码段整体作为一个补丁区域写回，所以对代码段任意字节的改动都会进入验证
    """
    try:
        metadata = json.loads((directory / METADATA).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ImageError(f"元数据格式错误: {e}") from e
    image = load_raw((directory / ORIGINAL_TEXT).read_bytes(), int(metadata["base"]))
    patched = (directory / PATCHED_TEXT).read_bytes()
    if len(patched) != len(image):
        raise ImageError("补丁后代码段长度与原始代码段不一致")

    blobs: Dict[str, Blob] = {}
    for name, filename in BLOB_FILES.items():
        blobs[name] = Blob(int(metadata["blobs"][name]["address"]), (directory / filename).read_bytes())
    runtime = RuntimeDirectory.from_dict(metadata["runtime"])
    artifacts = PatchArtifacts(
        patch_bytes={image.base: patched},
        entry_point=blobs["entry_point"],
        trampoline=blobs["trampoline"],
        relocated_table=blobs["relocated_table"],
        bitmap=blobs["bitmap"],
        dispatch_map={r.key: r.region_start for r in runtime.records},
        runtime=runtime,
        rvc=bool(metadata["rvc"]),
    )
    return image, artifacts, int(metadata.get("entry", image.base))


def cmd_verify(args: argparse.Namespace, settings: Settings) -> int:
    """对 patch 输出目录做差分验证"""
    logger = Logger.get_logger("CLI")
    directory = Path(args.out)
    try:
        image, artifacts, entry = load_artifacts(directory)
    except (KeyError, TypeError, ValueError) as e:
        raise ImageError(f"补丁产物不完整: {e}") from e

    verdict = differential_run(
        image, artifacts,
        entry=entry if args.entry is None else args.entry,
        cost_units=settings.cost_units,
        hooks=_hooks(args, settings),
        mode=args.mode,
        stack_top=settings.stack_top,
        stack_size=settings.stack_size,
        max_instret=settings.max_instret,
    )
    if args.trace and verdict.patched is not None:
        with open(args.trace, "w", encoding="utf-8") as f:
            verdict.patched.write_jsonl(f)

    text = "等价" if verdict.equivalent else "不等价: " + "; ".join(verdict.details)
    _emit(args, verdict.to_dict(), text)
    if not verdict.equivalent:
        logger.error(f"验证失败: {verdict.first_divergence}")
        return EXIT_VERIFY
    logger.info("验证通过")
    return EXIT_OK


def cmd_bench(args: argparse.Namespace, settings: Settings) -> int:
    """三种场景的开销基准"""
    kind = PatchKind((args.patch_kind or settings.bench_kind).upper())
    result = bench(
        kind=kind,
        iterations=settings.bench_iterations if args.iterations is None else args.iterations,
        syscall_number=settings.bench_syscall,
        cost_units=settings.cost_units,
        rvc=settings.rvc,
        max_instret=settings.max_instret,
    )
    _emit(args, result.to_dict(), result.format_text())
    return EXIT_OK


def cmd_footprint(args: argparse.Namespace, settings: Settings) -> int:
    """内存占用对比（总是附带标定点）"""
    n_patches = settings.footprint_patches if args.patches is None else args.patches
    text_length = settings.footprint_text_length if args.text_length is None else args.text_length
    measured = None
    if args.input:
        loaded = load_input(args, settings)
        artifacts = build_runtime(_plan(loaded, args), loaded.image, args.placement)
        n_patches, text_length = len(artifacts.dispatch_map), len(loaded.image)
        measured = artifacts.footprint.to_dict() if artifacts.footprint else None

    comparison = footprint_compare(n_patches, text_length, models_from_settings(settings))
    report = comparison.to_dict()
    text = comparison.format_text()
    if measured is not None:
        report["measured"] = measured
        text += f"\n实测: 共 {measured['total_bytes']} B"
    _emit(args, report, text)
    return EXIT_OK


COMMANDS = {
    "analyze": cmd_analyze,
    "patch": cmd_patch,
    "verify": cmd_verify,
    "bench": cmd_bench,
    "footprint": cmd_footprint,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--input", help="输入文件（ELF、原始指令块或语料规格）")
    common.add_argument("--kind", choices=("elf", "raw", "corpus-spec"), default="elf", help="输入类型")
    common.add_argument("--base", type=_int, help="raw 输入的加载地址")
    common.add_argument("--entry", type=_int, help="程序入口，默认为代码段起始地址")
    common.add_argument("--no-rvc", action="store_true", help="不使用压缩指令生成补丁")
    common.add_argument("--placement", type=_int, help="运行时代码块的起始地址")
    common.add_argument("--out", default="out", help="产物目录")
    common.add_argument("--format", choices=("json", "text"), default="json", help="报告格式")
    common.add_argument("--seed", type=int, help="覆盖语料规格中的随机种子")
    common.add_argument("--cost-units", type=int, help="内核模型每次调用的代价")
    common.add_argument("--config", help="配置文件路径（默认 config/patcher.yaml）")
    common.add_argument("-v", "--verbose", action="store_true", help="输出调试日志")

    parser = argparse.ArgumentParser(prog="rvpatch", description="RISC-V 系统调用拦截补丁工具")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("analyze", parents=[common], help="分析 ecall 和补丁类型分布")
    patch = sub.add_parser("patch", parents=[common], help="生成补丁和运行时代码块")
    patch.add_argument("--strict", action="store_true", help="存在无法打补丁的 ecall 时失败")

    verify = sub.add_parser("verify", parents=[common], help="差分验证 patch 的输出目录")
    verify.add_argument("--hooks", help="逗号分隔的钩子分组")
    verify.add_argument("--mode", choices=MODES, default="strict", help="比较模式")
    verify.add_argument("--trace", help="把补丁后运行的事件写成 JSON Lines")

    bench_parser = sub.add_parser("bench", parents=[common], help="三种场景的开销基准")
    bench_parser.add_argument("--patch-kind", choices=("gateway", "middle", "small"))
    bench_parser.add_argument("--iterations", type=int)

    footprint = sub.add_parser("footprint", parents=[common], help="内存占用对比")
    footprint.add_argument("--patches", type=int)
    footprint.add_argument("--text-length", type=_int)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for name in ("hooks", "strict", "mode", "trace", "patch_kind", "iterations", "patches", "text_length"):
        if not hasattr(args, name):
            setattr(args, name, None)

    try:
        settings = load_settings(args.config)
    except ConfigError as e:
        setup_default_logger().error(str(e))
        return EXIT_INPUT

    level = DEBUG if args.verbose else getattr(logging, settings.log_level, logging.INFO)
    logger = setup_default_logger(level=level, log_file=settings.log_file)
    settings = settings.with_overrides(
        cost_units=args.cost_units,
        rvc=False if args.no_rvc else None,
    )
    try:
        return COMMANDS[args.command](args, settings)
    except CodegenError as e:
        logger.error(f"补丁生成失败: {e}")
        return EXIT_CODEGEN
    except (RvPatchError, OSError, ValueError) as e:
        logger.error(str(e))
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
