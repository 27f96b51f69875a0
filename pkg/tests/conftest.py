import io

import numpy as np
import pytest

from cfbench.idm import IdmParams, SignConvention, simulate_follower
from cfbench.trajectory import Trajectory


def make_trajectory(tid, v_l, v_f, gap, hz=10.0, a_l=None, a_f=None):
    """Trajectory straight from arrays, derived fields filled in."""
    v_l = np.asarray(v_l, dtype=float)
    v_f = np.asarray(v_f, dtype=float)
    gap = np.asarray(gap, dtype=float)
    n = len(v_l)
    dt = 1.0 / hz
    return Trajectory(
        id=str(tid),
        hz=hz,
        t=np.arange(n) * dt,
        v_l=v_l,
        v_f=v_f,
        a_l=np.zeros(n) if a_l is None else np.asarray(a_l, dtype=float),
        a_f=np.zeros(n) if a_f is None else np.asarray(a_f, dtype=float),
        gap=gap,
        dv=v_f - v_l,
    )


def constant_trajectory(tid="0", n=120, v=30.0, gap=40.0, hz=10.0):
    return make_trajectory(tid, [v] * n, [v] * n, [gap] * n, hz=hz)


def leader_profile(tid, speeds, hz=10.0):
    """Leader-only trajectory (positions reconstructed by the simulator)."""
    speeds = np.asarray(speeds, dtype=float)
    n = len(speeds)
    dt = 1.0 / hz
    a = np.zeros(n)
    a[1:-1] = (speeds[2:] - speeds[:-2]) / (2 * dt)
    a[0] = (speeds[1] - speeds[0]) / dt
    a[-1] = (speeds[-1] - speeds[-2]) / dt
    return Trajectory(id=str(tid), hz=hz, t=np.arange(n) * dt, v_l=speeds, v_f=speeds, a_l=a)


def wavy_leader(tid, n=600, base=28.0, amp=4.0, period=200.0, hz=10.0, seed=None):
    """Smooth speed profile with accelerations and braking episodes."""
    t = np.arange(n)
    speeds = base + amp * np.sin(2 * np.pi * t / period) + 1.5 * np.sin(2 * np.pi * t / 77.0)
    if seed is not None:
        rng = np.random.default_rng(seed)
        speeds = speeds + rng.normal(0, 0.05, size=n).cumsum() * 0.02
    return leader_profile(tid, np.clip(speeds, 0.5, None), hz=hz)


TRUE_PARAMS = IdmParams(a_max=1.6, c0=4.0, d=2.5, tau=1.4, b_d=3.0)


def make_idm_dataset(
    n_traj=4,
    n=600,
    params=TRUE_PARAMS,
    conv=SignConvention.TREIBER_2000,
    hz=10.0,
    init_gap=45.0,
    seed=7,
):
    """Follower trajectories generated by the car-following law itself."""
    out = []
    for k in range(n_traj):
        leader = wavy_leader(str(k), n=n, base=26.0 + k, amp=4.0 + 0.5 * k, hz=hz, seed=seed + k)
        sim = simulate_follower(
            params, leader, init=(-init_gap, leader.v_l[0]), conv=conv
        )
        sim.id = str(k)
        out.append(sim)
    return out


@pytest.fixture
def idm_dataset():
    return make_idm_dataset()


def csv_from_rows(header, rows):
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(str(x) for x in row) + "\n")
    buf.seek(0)
    return buf


SIMPLE_HEADER = ["traj_id", "time_s", "v_leader", "v_follower", "gap_m"]


def simple_csv(rows):
    return csv_from_rows(SIMPLE_HEADER, rows)


@pytest.fixture
def two_row_csv():
    return simple_csv([[0, 0.0, 30, 30, 40], [0, 0.1, 30, 30, 40]])


@pytest.fixture(scope="session")
def dataset_csv(tmp_path_factory):
    """Synthetic car-following dataset written to disk in the canonical schema."""
    from cfbench.trajectory import emit_csv

    path = tmp_path_factory.mktemp("data") / "synthetic.csv"
    emit_csv(make_idm_dataset(n_traj=5, n=420), path)
    return str(path)


@pytest.fixture(scope="session")
def true_params_file(tmp_path_factory):
    from cfbench.idm import CalibrationResult, SignConvention, save_params

    path = tmp_path_factory.mktemp("params") / "idm_params.txt"
    save_params(
        path,
        CalibrationResult(
            params=TRUE_PARAMS, rmse=0.0, convention=SignConvention.TREIBER_2000, n_evaluations=0
        ),
    )
    return str(path)
