"""Smoke test for the umcf extension module.

Run after `maturin develop` (or with the built library on PYTHONPATH):

    python crates/py/python/smoke_test.py
"""

import math
import sys
import tempfile
from pathlib import Path

import umcf


def check(cond, msg):
    if not cond:
        print(f"FAIL {msg}")
        sys.exit(1)
    print(f"ok   {msg}")


def main():
    spec = {"dims": [16, 16, 16], "semi_axes": [[2, 2, 2], [4, 4, 3.5], [6.5, 6, 6]], "violation_rate": 0.1}
    ph = umcf.generate_phantom(spec)
    check(ph.features.dims == (16, 16, 16) and ph.features.channels == 16, "phantom shapes")
    check(umcf.hierarchy_violation_rate(ph.ground_truth) == 0.0, "ground truth is nested")

    tokens = ph.tokens()
    check(len(tokens) == 3 and abs(math.hypot(*tokens.prototype) - 1.0) < 1e-12, "unit prototype")

    result = umcf.run_fusion(ph.features, tokens, ph.probmaps, {"iterations": 4})
    res = result.residuals
    check(len(res) == 4 and all(b <= a for a, b in zip(res, res[1:])), f"monotone residuals {res}")
    check(result.violation_rate_after == 0.0, "refreshed maps are nested")
    check(result.diagnostics()[-1]["kind"] == "summary", "diagnostics report")

    try:
        umcf.run_fusion(ph.features, tokens, ph.probmaps,
                        {"disable_mV": True, "disable_mT": True, "disable_mS": True, "disable_mTS": True})
        check(False, "all streams disabled rejected")
    except umcf.FusionError as e:
        check("all streams disabled" in str(e), "all streams disabled rejected")

    mask = [0.0] * 27
    mask[13] = 1.0
    sdt, degenerate = umcf.signed_distance_transform(umcf.VoxelGrid((3, 3, 3), 1, mask))
    check(not degenerate and sdt.data[13] == 1.0 and abs(sdt.data[0] + math.sqrt(3)) < 1e-15, "sdt example")

    check(umcf.sym3_eigenvalues([[3, 0, 0], [0, 1, 0], [0, 0, 2]]) == (3.0, 2.0, 1.0), "eigenvalues")

    w = umcf.fusion_weights([0.0, 1.0, 1.0, 1.0])
    check(abs(w[0] - 1 / (1 + 3 * math.exp(-1))) < 1e-15 and abs(sum(w) - 1) < 1e-15, "gate weights")

    stats = umcf.spatial_stats(ph.probmaps, "WT")
    check(not stats["degenerate"] and len(stats["eigenvalues"]) == 3, "spatial stats")

    phi = umcf.semantic_field(ph.features, tokens)
    u = umcf.uncertainty_fields(ph.probmaps, phi)
    check(all(0.0 <= x <= 1.0 for name in u for x in u[name].data), "uncertainties in [0, 1]")

    truth = ph.ground_truth.hardened("ET")
    check(umcf.dice(truth, truth) == 1.0, "dice")

    with tempfile.TemporaryDirectory() as d:
        path = str(Path(d) / "f.vol")
        result.field.write(path)
        back = umcf.VoxelGrid.read(path)
        check(back.dims == result.field.dims, "volume round trip")
        try:
            umcf.VoxelGrid.read(str(Path(d) / "missing.vol"))
            check(False, "missing file raises OSError")
        except OSError:
            check(True, "missing file raises OSError")

    print("smoke test passed")


if __name__ == "__main__":
    main()
