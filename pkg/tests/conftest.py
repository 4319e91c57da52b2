import numpy as np
import pytest

from ambfhe.ckks import CkksContext, preset
from ambfhe.linops import PackedLayout, rotation_steps_for


class KeySet:
    def __init__(self, name, steps, seed=0):
        self.params = preset(name)
        self.ctx = CkksContext(self.params)
        self.rng = np.random.default_rng(seed)
        self.sk, self.pk, self.evk = self.ctx.keygen(steps, rng=self.rng)

    def enc(self, values, **kw):
        return self.ctx.encrypt(self.pk, self.ctx.encode(values, **kw), rng=self.rng)

    def dec(self, ct):
        return self.ctx.decrypt_values(self.sk, ct)


@pytest.fixture(scope="session")
def toy():
    # every rotation step of the 8-slot toy ring
    return KeySet("TOY16", range(1, 8))


@pytest.fixture(scope="session")
def pn12():
    return KeySet("PN12QP109", rotation_steps_for(PackedLayout(512, 2, 2048)) | {1, 3}, seed=1)


@pytest.fixture(scope="session")
def pn13():
    return KeySet("PN13QP218", {1, 2}, seed=2)


# -- acceptance reporting -------------------------------------------------------------

_ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture()
def acceptance():
    """Record the verdict line for one acceptance criterion; printed in the terminal summary."""

    def record(number: int, title: str, ok: bool, detail: str):
        line = f"ACCEPTANCE {number} {title}: {'PASS' if ok else 'FAIL'} ({detail})"
        _ACCEPTANCE_LINES[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE_LINES):
        terminalreporter.write_line(_ACCEPTANCE_LINES[n])
