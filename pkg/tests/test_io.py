import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from gaitbci.core import CueSchedule, Recording
from gaitbci.decoder import StateTrace
from gaitbci.errors import FormatError
from gaitbci.io import (MAGIC, dumps_cues, dumps_trace, load_cues, load_recording, loads_cues, loads_trace,
                        save_cues, save_recording)

finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 50)), elements=finite),
       st.sampled_from([".gbr", ".txt"]))
def test_recording_round_trip_bitwise(tmp_path_factory, x, suffix):
    rec = Recording(x, 256.0, tuple(f"ch {i}" for i in range(len(x))), t0=1.5)
    path = tmp_path_factory.mktemp("rec") / f"r{suffix}"
    save_recording(path, rec)
    back = load_recording(path)
    assert back.samples.tobytes() == rec.samples.tobytes()
    assert (back.fs, back.channel_labels, back.t0) == (rec.fs, rec.channel_labels, rec.t0)
    assert path.read_bytes().startswith(MAGIC) == (suffix == ".gbr")


def test_binary_layout_is_channel_major(tmp_path):
    rec = Recording(np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]), 10.0)
    save_recording(tmp_path / "r.gbr", rec)
    body = (tmp_path / "r.gbr").read_bytes().split(b"\n", 2)[2]
    assert np.frombuffer(body, "<f8").tolist() == [1, 2, 3, 4, 5, 6]


@pytest.mark.parametrize("mutate", [
    lambda b: b[:-8],                                   # truncated body
    lambda b: MAGIC + b"{not json\n" + b[len(MAGIC):],  # broken header
    lambda b: b.replace(b'"version":1', b'"version":7'),
    lambda b: b.replace(b'"fs"', b'"fz"'),
])
def test_corrupt_binary_rejected(tmp_path, mutate):
    path = tmp_path / "r.gbr"
    save_recording(path, Recording(np.ones((2, 4)), 10.0))
    path.write_bytes(mutate(path.read_bytes()))
    with pytest.raises(FormatError):
        load_recording(path)


def test_corrupt_text_rejected(tmp_path):
    path = tmp_path / "r.txt"
    save_recording(path, Recording(np.ones((2, 4)), 10.0))
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines[:2]) + "\n")
    with pytest.raises(FormatError):
        load_recording(path)
    path.write_text("\n".join(lines[:2] + ["1 2 x 4"]) + "\n")
    with pytest.raises(FormatError):
        load_recording(path)
    path.write_text("\n".join(lines[:2] + ["1 2 3"]) + "\n")
    with pytest.raises(FormatError):
        load_recording(path)


def test_cues_round_trip(tmp_path):
    cues = CueSchedule.session()
    assert dumps_cues(cues).splitlines()[:2] == ["Idle 60.0", "Walk 60.0"]
    save_cues(tmp_path / "c.cues", cues)
    assert load_cues(tmp_path / "c.cues") == cues
    text = "# protocol\nIdle 10  # warm-up\n\nwalk 2.5\n"
    assert loads_cues(text).entries == ((0, 10.0), (1, 2.5))


@pytest.mark.parametrize("text", ["Idle", "Run 10", "Idle ten", "Walk 1 2", "Idle -3"])
def test_bad_cues_rejected(text):
    with pytest.raises(FormatError):
        loads_cues(text)


def test_trace_round_trip():
    rng = np.random.default_rng(0)
    n = 30
    tr = StateTrace(0.25, 0.75 + 0.25 * np.arange(n), rng.integers(0, 2, n).astype(np.int8), rng.random(n),
                    rng.random(n))
    back = loads_trace(dumps_trace(tr))
    assert back == tr
    assert dumps_trace(back) == dumps_trace(tr)
    assert dumps_trace(tr).splitlines()[2].split()[1] in ("Idle", "Walk")


def test_trace_without_raw_and_errors():
    tr = StateTrace(0.25, np.array([0.75]), np.array([1], dtype=np.int8), np.array([0.9]))
    assert loads_trace(dumps_trace(tr)).raw is None
    with pytest.raises(FormatError):
        loads_trace("0.75 Walk 0.9 0.8\n")
    with pytest.raises(FormatError):
        loads_trace("# step=0.25\n0.75 Walk 0.9\n")
