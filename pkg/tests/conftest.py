import sys

import numpy as np

from qmmtube.core import BBox, DetectionRecord
from qmmtube.encoder import EncoderParams


def det(frame, box=(0, 0, 10, 10), person=0.95, query=(1.0, 0.0), gt_person=None, gt_action=None):
    return DetectionRecord(frame, BBox(*box), [person, 1.0 - person], query, gt_person, gt_action)


def identity_encoder(d):
    eye = np.eye(d)
    z = np.zeros(d)
    return EncoderParams(eye, z, eye, z, eye.copy(), z)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for name, (ok, detail) in sorted(results.items(), key=lambda kv: int(kv[0].split()[0])):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
