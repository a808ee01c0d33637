"""Regenerates the WFDB fixtures under crates/core/tests/fixtures/wfdb.

The reference `wfdb` package writes a small two-lead format-212 record with
an annotation stream (including AUX notes and a gap wide enough to need a
SKIP word), reads it back, and stores what it decoded in expected.json. The
Rust integration tests compare their own decoding against that file.
"""

import json
import os
import sys

import numpy as np
import wfdb

OUT = os.path.join(os.path.dirname(__file__), "..", "crates", "core", "tests", "fixtures", "wfdb")


def main() -> int:
    os.makedirs(OUT, exist_ok=True)
    rng = np.random.default_rng(7)
    n = 4000
    t = np.arange(n)
    mlii = (400 * np.sin(t / 15.0) + rng.integers(-60, 60, n)).astype(np.int64)
    v1 = (-300 * np.cos(t / 40.0) + rng.integers(-60, 60, n)).astype(np.int64)
    mlii[5] = -2048
    v1[5] = 2047
    d = np.stack([mlii, v1], axis=1)

    cwd = os.getcwd()
    os.chdir(OUT)
    try:
        wfdb.wrsamp(
            "synth01",
            fs=360,
            units=["mV", "mV"],
            sig_name=["MLII", "V1"],
            d_signal=d,
            fmt=["212", "212"],
            adc_gain=[200.0, 200.0],
            baseline=[1024, 1024],
        )
        samples = np.array([150, 420, 700, 2900, 3100, 3500, 3850])
        symbols = ["N", "A", "+", "V", "f", "F", "/"]
        aux = ["", "", "(AFIB", "", "", "note", ""]
        wfdb.wrann("synth01", "atr", samples, symbol=symbols, aux_note=aux)

        rec = wfdb.rdrecord("synth01", physical=False)
        ann = wfdb.rdann("synth01", "atr")
    finally:
        os.chdir(cwd)

    code_of = wfdb.io.annotation.ann_label_table.set_index("symbol").label_store
    expected = {
        "fs": rec.fs,
        "sig_len": rec.sig_len,
        "sig_name": rec.sig_name,
        "fmt": rec.fmt,
        "adc_gain": rec.adc_gain,
        "baseline": rec.baseline,
        "signals": [rec.d_signal[:, k].astype(int).tolist() for k in range(rec.n_sig)],
        "ann_sample": ann.sample.astype(int).tolist(),
        "ann_symbol": ann.symbol,
        "ann_code": [int(code_of[s]) for s in ann.symbol],
    }
    with open(os.path.join(OUT, "expected.json"), "w") as f:
        json.dump(expected, f)
    return 0


if __name__ == "__main__":
    sys.exit(main())
