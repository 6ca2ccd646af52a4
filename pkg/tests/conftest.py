import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.function_scoped_fixture])
settings.load_profile("default")

_VERDICTS = pytest.StashKey()


def pytest_configure(config):
    config.stash[_VERDICTS] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)


@pytest.fixture
def verdict(request):
    """Record and print one PASS/FAIL line for an acceptance criterion."""

    def record(criterion, ok, detail):
        line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'} - {detail}"
        print(line)
        request.config.stash[_VERDICTS].append(line)
        return ok

    return record


@pytest.fixture(scope="session")
def surrogate_path(tmp_path_factory):
    from hieronst.nst.backbone import make_surrogate

    path = tmp_path_factory.mktemp("weights") / "vgg19_surrogate.pt"
    make_surrogate(path, seed=0)
    return path


@pytest.fixture(scope="session")
def backbone(surrogate_path):
    from hieronst.nst.backbone import Backbone

    return Backbone.load(surrogate_path)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


TOY_CONFIG = """\
seed: 3
paths:
  out: out
  photos: data/unas
  font: data/font
  styles: data/styles
  backbone: {backbone}
  single_class: data/photos/G17
  extra_tests: {{Photos: data/photos}}
curation: {{min_class_size: 5, replicas: {{NST: 3, Unas: 3, Font: 1}}}}
nst: {{steps: 1, max_dim: 32}}
model: {{input_size: [32, 32, 3], entry_widths: [8, 8], block_widths: [16, 16, 16], final_width: 32}}
train: {{max_epochs: 3, batch_size: 8}}
sweep: {{learning_rates: [0.001], early_stop_deltas: [0.05], replicas: 1}}
"""


@pytest.fixture(scope="session")
def toy_data(tmp_path_factory):
    from hieronst.toydata import write_corpus

    root = tmp_path_factory.mktemp("toy")
    write_corpus(root / "data", ["G17", "O49", "P8"], n_styles=2, photos_per_class=3, unas_per_class=8,
                 size=48, seed=0)
    return root / "data"


@pytest.fixture
def toy_project(tmp_path, toy_data, surrogate_path):
    """A project directory with toy data and a fast config; returns the config path."""
    (tmp_path / "data").symlink_to(toy_data, target_is_directory=True)
    cfg = tmp_path / "config.yaml"
    cfg.write_text(TOY_CONFIG.format(backbone=surrogate_path))
    return cfg
