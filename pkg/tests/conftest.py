import struct

import numpy as np
import pytest

from onebitgen.model import ACTIVATION_KINDS, Activation, MlpGenerator, MlpLayer


def random_net(gen, depth=None, widths=None, kinds=None, max_width=32):
    """Random MLP with weights scaled by fan-in so activations stay in a useful range."""
    depth = depth or int(gen.integers(1, 5))
    widths = widths or [int(w) for w in gen.integers(1, max_width + 1, size=depth + 1)]
    kinds = kinds or [ACTIVATION_KINDS[int(k)] for k in gen.integers(0, 4, size=depth)]
    layers = []
    for i in range(depth):
        W = gen.standard_normal((widths[i + 1], widths[i])) / np.sqrt(widths[i])
        b = 0.3 * gen.standard_normal(widths[i + 1])
        layers.append(MlpLayer(W, b, Activation(kinds[i])))
    return MlpGenerator(layers)


def write_idx(path, array, magic=0x803):
    array = np.asarray(array, dtype=np.uint8)
    header = struct.pack(">I", magic) + struct.pack(f">{array.ndim}I", *array.shape)
    path.write_bytes(header + array.tobytes())
    return path


@pytest.fixture(scope="session")
def reference_vae():
    """The desk-scale reference VAE (about 7 s to train on one core)."""
    from onebitgen.experiment import reference_train_job

    return reference_train_job().run()


@pytest.fixture(scope="session")
def reference_decoder(reference_vae):
    return reference_vae.decoder


@pytest.fixture(scope="session")
def reference_model_file(reference_decoder, tmp_path_factory):
    from onebitgen.model import save_model

    path = tmp_path_factory.mktemp("model") / "decoder.json"
    save_model(reference_decoder, path)
    return path


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import REPORT
    except ImportError:
        return
    if REPORT:
        terminalreporter.section("acceptance criteria")
        for line in REPORT:
            terminalreporter.write_line(line)
