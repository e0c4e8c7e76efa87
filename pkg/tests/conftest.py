import pytest
import torch

from promptseg.config import ModelConfig, RunConfig


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)
    yield


@pytest.fixture
def tiny_cfg():
    """Smallest valid model: 32 px input, 2×2 top-level embedding."""
    return ModelConfig(embed_dim=8, image_size=32, blocks_per_stage=1, num_heads=2, mlp_dim=16)


@pytest.fixture
def tiny_run(tiny_cfg):
    cfg = RunConfig(model=tiny_cfg)
    cfg.data.n_train, cfg.data.n_test = 4, 2
    cfg.train.epochs, cfg.train.max_steps = 1, 3
    return cfg.validate()


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is not None and call.when == "call":
        item.user_properties.append(("criterion", marker.args))


def pytest_terminal_summary(terminalreporter):
    lines = {}
    for status in ("passed", "failed"):
        for rep in terminalreporter.stats.get(status, []):
            props = dict(rep.user_properties)
            if "criterion" not in props:
                continue
            n, title = props["criterion"]
            verdict = "PASS" if status == "passed" else "FAIL"
            if status == "passed" and "verdict" in props:  # non-blocking criteria report their own outcome
                verdict = props["verdict"]
            detail = props.get("detail")
            lines[n] = f"criterion {n:>2} {verdict}  {title}" + (f"  [{detail}]" if detail else "")
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
