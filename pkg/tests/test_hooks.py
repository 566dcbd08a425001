import errno

import pytest

from src.core.errors import ConfigError
from src.emulator.kernel import SyscallCall
from src.hooks import (
    HookInfo,
    HookResult,
    HookSet,
    get_hooks_for_groups,
    get_hooks_registry,
    hook,
    initialize_hook_groups,
    validate_groups,
)
from src.hooks.groups import load_groups_from_yaml
from src.hooks.implementations import FAKE_GETPID_RESULT


ARGS = (1, 2, 3, 0, 0, 0)


@pytest.fixture(autouse=True)
def groups():
    return initialize_hook_groups()


def _pre(name, result, syscalls=None):
    return HookInfo(name, lambda call: result, "pre",
                    frozenset(syscalls) if syscalls is not None else None, name)


def test_builtin_hooks_registered():
    registry = get_hooks_registry()
    assert {"fake_getpid", "deny_openat", "log_syscall", "log_clone"} <= set(registry)
    assert registry["fake_getpid"].stage == "pre"
    assert registry["log_clone"].syscalls == frozenset({220, 435})
    assert registry["fake_getpid"].description == "getpid 不进入内核，直接返回固定的进程号"


def test_default_groups(groups):
    assert {"passthrough", "fake_getpid", "logging", "sandbox", "all"} <= set(groups)
    assert get_hooks_for_groups(["passthrough"]).names() == []


def test_fake_getpid_group():
    hooks = get_hooks_for_groups(["fake_getpid"])
    assert hooks.run_pre(SyscallCall(172, ARGS)) == HookResult(FAKE_GETPID_RESULT, 0)
    assert hooks.run_pre(SyscallCall(64, ARGS)) is None


def test_sandbox_denies_openat():
    hooks = get_hooks_for_groups(["sandbox"])
    assert hooks.run_pre(SyscallCall(56, ARGS)).ret0 == -errno.EACCES
    assert [h.name for h in hooks.post] == ["log_syscall"]


def test_groups_deduplicate():
    hooks = get_hooks_for_groups(["all", "logging", "sandbox"])
    assert sorted(hooks.names()) == ["deny_openat", "fake_getpid", "log_clone", "log_syscall"]


def test_unknown_group():
    assert validate_groups(["all", "nope"]) == (["all"], ["nope"])
    with pytest.raises(ConfigError):
        get_hooks_for_groups(["nope"])


def test_first_non_none_pre_hook_wins():
    hooks = HookSet(pre=[_pre("silent", None), _pre("other", HookResult(1), [99]),
                         _pre("first", HookResult(5, 6)), _pre("second", HookResult(7))])
    assert hooks.run_pre(SyscallCall(64, ARGS)) == HookResult(5, 6)
    assert hooks.run_pre(SyscallCall(99, ARGS)) == HookResult(1)


def test_post_and_clone_hooks_receive_results():
    seen = []
    hooks = HookSet.from_hooks([
        HookInfo("post", lambda call, r0, r1: seen.append(("post", call.number, r0, r1)), "post", None, ""),
        HookInfo("clone", lambda call, child: seen.append(("clone", child)), "clone", frozenset({220}), ""),
    ])
    hooks.run_post(SyscallCall(64, ARGS), 3, 0)
    hooks.run_clone(SyscallCall(220, ARGS), 0x1000)
    hooks.run_clone(SyscallCall(435, ARGS), 0x1001)
    assert seen == [("post", 64, 3, 0), ("clone", 0x1000)]


def test_hook_decorator():
    @hook(name="decorated_for_test", stage="post", syscalls=[64])
    def handler(call, ret0, ret1):
        """
        测试用钩子

        参数:
            call: 请求
        """

    info = get_hooks_registry()["decorated_for_test"]
    assert info.func is handler
    assert info.description == "测试用钩子"
    assert info.applies_to(64) and not info.applies_to(63)
    assert info.to_dict()["syscalls"] == [64]

    with pytest.raises(ValueError):
        hook(stage="during")


def test_bypassing_helper():
    hooks = HookSet.bypassing(64, -1, 2)
    assert hooks.run_pre(SyscallCall(64, ARGS)) == HookResult(-1, 2)
    assert hooks.run_pre(SyscallCall(63, ARGS)) is None


def test_load_groups_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_groups_from_yaml(str(tmp_path / "missing.yaml"))

    bad = tmp_path / "bad.yaml"
    bad.write_text("group: not-a-list\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_groups_from_yaml(str(bad))

    broken = tmp_path / "broken.yaml"
    broken.write_text("a: [1\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_groups_from_yaml(str(broken))

    empty = tmp_path / "empty.yaml"
    empty.write_text("only:\n", encoding="utf-8")
    assert load_groups_from_yaml(str(empty)) == {"only": []}
