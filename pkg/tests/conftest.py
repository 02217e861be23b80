import sys

import numpy as np
import pytest

from mctsnas.arch import ArchState, MacroConfig


def state_from(decisions, extended=False):
    s = ArchState((), extended)
    for m in decisions:
        s = s.play(m)
    return s


def random_terminal(rng, extended=False):
    s = ArchState((), extended)
    while not s.is_terminal:
        legal = s.legal_moves()
        s = s.play(legal[int(rng.integers(len(legal)))])
    return s


# Hand-enumerated fixtures: (decisions, macro, expected params).
# Op indices: identity 0, conv3x3 1, conv5x5 2, sepconv3x3 3, sepconv5x5 4,
# dilconv3x3 5, maxpool3x3 6, avgpool3x3 7.  Combine: add 0, concat 1.
FIXTURE_IDENTITY = ((0,) * 15, MacroConfig(R=2, normals_per_stage=1, base_channels=8), 80 + 25)

FIXTURE_B = (
    (0, 1, 1, 0, 0,  # normal: conv3x3(prev) + identity(prev-prev), add
     0, 0, 1, 6, 1,  # reduction: conv3x3(prev) ++ maxpool(prev)
     0, 1, 3, 0, 1),  # upsample: sepconv3x3(prev) ++ identity(prev-prev)
    MacroConfig(R=1, normals_per_stage=1, base_channels=4),
    # stem 40, enc0.normal 148, enc0.reduce 296, mid 872 + proj 40,
    # dec0.upsample 108, dec0.normal 724 + proj 40, head 9
    40 + 148 + 296 + 912 + 108 + 764 + 9,
)

FIXTURE_C = (
    (1, 1, 5, 4, 1,  # normal: dilconv3x3(pp) ++ sepconv5x5(pp)
     1, 0, 7, 2, 0,  # reduction: avgpool(pp) + conv5x5(prev), add
     0, 0, 0, 6, 0),  # upsample: identity + maxpool, add
    MacroConfig(R=1, normals_per_stage=1, base_channels=2, stem=False),
    # enc0.normal 20+29, enc0.reduce 404 + proj 8, mid 148+120,
    # dec0.upsample 0, dec0.normal 146+218, head 5
    49 + 412 + 268 + 0 + 364 + 5,
)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
