import numpy as np
import pytest

from refvos import tensors as T


@pytest.fixture
def f64():
    with T.precision(64):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# A model small enough for end-to-end CLI runs in a second or two.
TINY = {
    "model.dim": 16, "model.ffn_dim": 16, "model.heads": 2,
    "backbone.stem_channels": 4, "backbone.channels": "4,8,8", "backbone.fusion_dim": 4,
    "text.embed_dim": 16, "text.heads": 2,
    "audio.feat_dim": 16, "audio.heads": 2, "audio.conv_channels": 2,
    "transformer.enc_layers": 1, "transformer.dec_layers": 1, "transformer.heads": 2,
    "mti.enc_blocks": 1, "mti.dec_blocks": 1,
    "data.n_train": 3, "data.n_val": 2, "train.log_every": 1,
}


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text("".join(f"{k}={v}\n" for k, v in TINY.items()))
    return path


@pytest.fixture(scope="session")
def tiny_data(tmp_path_factory):
    from refvos.config import Config
    from refvos.datagen import dataset_build

    root = tmp_path_factory.mktemp("data")
    dataset_build(Config(TINY), root, log=lambda *_: None)
    return root


# One line per acceptance criterion, printed at the end of the session.
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
