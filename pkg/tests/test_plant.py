import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gaitbci.core import State
from gaitbci.errors import ConfigurationError, FormatError, SimulationError
from gaitbci.plant import (Phase, PlantConfig, PlantLog, RoGOPlant, detect_walking, gyro, simulate_batch,
                           walking_timeline)

from oracles import EventPlant

GRID = np.arange(0, 120, 0.25)
cmd_seqs = st.lists(st.tuples(st.integers(0, 400), st.sampled_from([0, 1])), max_size=40)


def drive(commands, cfg=None):
    """Feed (step_index, cmd) pairs at 0.25 s resolution, in time order."""
    plant = RoGOPlant(cfg)
    for k, c in sorted(commands, key=lambda kc: kc[0]):
        plant.command(c, k * 0.25)
    plant.advance_to(max(plant.t, GRID[-1]))
    return plant


# -- examples ----------------------------------------------------------------

def test_walk_at_zero_reaches_walking_at_5_25():
    p = RoGOPlant()
    assert p.command(State.WALK, 0.0)
    assert p.advance_to(0.25).phase == Phase.STARTING_UP
    assert p.advance_to(5.2).phase == Phase.STARTING_UP
    s = p.advance_to(5.25)
    assert s.phase == Phase.WALKING and s.phase_entered == 5.25


def test_idle_during_start_up_is_dropped():
    p = RoGOPlant()
    p.command("Walk", 0.0)
    assert not p.command("Idle", 2.0)
    assert p.advance_to(10.0).phase == Phase.WALKING
    assert [ph for _, ph in p.log.events] == [Phase.STOPPED, Phase.STARTING_UP, Phase.WALKING]


def test_redundant_commands_rejected():
    p = RoGOPlant()
    assert not p.command(State.IDLE, 0.0)
    p.command(State.WALK, 1.0)
    assert not p.command(State.WALK, 1.1)   # still in flight
    assert not p.command(State.WALK, 7.0)   # already Walking
    assert p.command(State.IDLE, 7.0)


def test_sixty_second_walk_duration_matches_oracle():
    p = RoGOPlant()
    ref = EventPlant()
    for plant in (p, ref):
        plant.command(1, 0.0)
        plant.command(0, 60.0)
    p.advance_to(120.0)
    assert p.log.walking_intervals(120.0) == [(5.25, 60.25)]
    assert np.array_equal(walking_timeline(p.log, GRID), ref.walking(GRID))
    assert p.advance_to(120.0).phase == Phase.STOPPED


def test_no_commands_never_walks():
    p = RoGOPlant()
    p.advance_to(300.0)
    assert not walking_timeline(p.log, GRID).any()
    assert len(p.log.events) == 1


def test_time_must_not_go_backwards():
    p = RoGOPlant()
    p.advance_to(3.0)
    with pytest.raises(SimulationError):
        p.advance_to(2.0)
    with pytest.raises(SimulationError):
        p.command(State.WALK, 1.0)
    with pytest.raises(SimulationError):
        p.advance(0.0)


def test_config_and_log_validation():
    with pytest.raises(ConfigurationError):
        PlantConfig(startup_latency=-1)
    with pytest.raises(ConfigurationError):
        PlantConfig(gait_cadence=0)
    with pytest.raises(ConfigurationError, match="bogus"):
        PlantConfig.from_dict({"bogus": 1})
    with pytest.raises(FormatError):
        PlantLog(((0.0, Phase.STOPPED), (1.0, Phase.WALKING)))
    with pytest.raises(FormatError):
        PlantLog(((0.0, Phase.STOPPED), (-1.0, Phase.STARTING_UP)))
    with pytest.raises(FormatError):
        Phase.parse("Running")


def test_log_text_round_trip():
    log = drive([(0, 1), (100, 0), (200, 1)]).log
    assert PlantLog.loads(log.dumps()) == log
    assert log.dumps().splitlines()[2] == "0.0 Stopped"


# -- properties --------------------------------------------------------------

@given(cmd_seqs)
def test_matches_event_list_oracle(commands):
    plant = drive(commands)
    ref = EventPlant()
    for k, c in sorted(commands, key=lambda kc: kc[0]):
        ref.command(c, k * 0.25)
    assert np.array_equal(walking_timeline(plant.log, GRID), ref.walking(GRID))


@given(cmd_seqs)
def test_legal_and_locked_in(commands):
    cfg = PlantConfig(startup_latency=5.0, shutdown_latency=3.0)
    ev = drive(commands, cfg).log.events
    for (t0, p0), (t1, p1) in zip(ev, ev[1:]):
        assert p1 == (p0 + 1) % 4
        if p0 == Phase.STARTING_UP:
            assert t1 - t0 == pytest.approx(cfg.startup_latency)
        if p0 == Phase.SHUTTING_DOWN:
            assert t1 - t0 == pytest.approx(cfg.shutdown_latency)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.lists(st.sampled_from([0, 1]), min_size=200, max_size=200), min_size=1, max_size=5),
       st.sampled_from([0.0, 0.25, 2.0]))
def test_batch_equals_scalar(rows, latency):
    cfg = PlantConfig(command_latency=latency, startup_latency=5.0, shutdown_latency=4.0)
    states = np.array(rows, dtype=np.int8)
    grid = np.arange(0, 60, 0.25)
    times = 0.75 + 0.25 * np.arange(200)   # last decisions fall past the grid
    out = simulate_batch(states, times, grid, cfg)
    for r in range(len(states)):
        p = RoGOPlant(cfg)
        for t, s in zip(times, states[r]):
            if t > grid[-1]:
                break
            p.command(int(s), t)
        p.advance_to(grid[-1])
        assert np.array_equal(out[r], walking_timeline(p.log, grid))


def test_deterministic():
    cmds = [(k, (k // 37) % 2) for k in range(400)]
    assert drive(cmds).log == drive(cmds).log


# -- gyro --------------------------------------------------------------------

def test_gyro_cadence_and_rest():
    p = RoGOPlant(PlantConfig(startup_latency=0.0, command_latency=0.0))
    p.command(State.WALK, 10.0)
    p.command(State.IDLE, 70.0)
    p.advance_to(100.0)
    tr = gyro(p.log, 100.0, 100.0)
    g = tr.angular_velocity
    walking = g[1000:7000]
    rising = np.sum((walking[:-1] < 0) & (walking[1:] >= 0))
    assert rising + 1 == 54   # the first cycle starts at zero phase
    assert not g[:1000].any() and not g[7000 + 500:].any()
    assert np.abs(g).max() == pytest.approx(100.0, rel=1e-3)
    assert tr.to_recording().channel_labels == ("gyro",)


@settings(max_examples=100, deadline=None)
@given(cmd_seqs)
def test_detector_recovers_walking_intervals(commands):
    fs = 100.0
    log = drive(commands).log
    truth = log.walking_intervals(GRID[-1])
    found = detect_walking(gyro(log, fs, GRID[-1]), threshold=5.0, cadence=0.9)
    truth = [iv for iv in truth if iv[1] - iv[0] > 2 / fs]
    assert len(found) == len(truth)
    for (a, b), (c, d) in zip(truth, found):
        assert abs(a - c) <= 1 / fs + 1e-9
        # the sinusoid may sit below threshold for the last partial half-cycle
        assert b - 1 / (0.9 * 2) - 1 / fs <= d <= b + 1 / fs + 1e-9
