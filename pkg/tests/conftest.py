import pytest

from cspm.model import ModelConfig


@pytest.fixture
def tiny_config():
    """Factory for a small f64 config that keeps finite differences fast."""

    def make(**overrides):
        base = dict(
            n_classes=3, seq_len=16, variant="full", n_subbands=2, kernel_len=5,
            lags=(1, 2), mix_channels=4, mix_kernel=3, hidden=3, attn_dim=4,
            mlp_hidden=4, dtype="f64",
        )
        base.update(overrides)
        return ModelConfig(**base)

    return make


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Print one PASS/FAIL line per acceptance criterion at the end of a run."""
    lines = []
    for status in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(status, []):
            if "test_acceptance" in rep.nodeid:
                label = "PASS" if status == "passed" else "FAIL"
                name = rep.nodeid.split("::")[-1]
                lines.append((name, label))
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for name, label in sorted(lines):
            terminalreporter.write_line(f"{label}  {name}")
