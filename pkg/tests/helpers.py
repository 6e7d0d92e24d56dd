"""Small builders shared by several test modules."""

import numpy as np

from mmsounder.scene import FixedMPCScene, GroundTruthMPC, SINGLE_BOUNCE
from mmsounder.sounder import SweepSchedule

EIRP_DBM = 57.0


def tx_power_dbm(codebook, eirp_dbm=EIRP_DBM):
    return eirp_dbm - max(b.boresight_gain_dbi for b in codebook.beams)


def path_for_rx_power(codebook, rx_power_dbm, delay_s=100e-9, dod=0.0, doa=0.0, doppler_hz=0.0,
                      phase=0.0, eirp_dbm=EIRP_DBM, tx_beam=None, rx_beam=None):
    """One path whose total received power through the given beams is ``rx_power_dbm``.

    Beams default to the ones with the strongest response towards the path.
    """
    g_tx = np.abs(codebook.field(dod, 0.0)) ** 2
    g_rx = np.abs(codebook.field(doa, 0.0)) ** 2
    g_tx = g_tx.max() if tx_beam is None else g_tx[tx_beam]
    g_rx = g_rx.max() if rx_beam is None else g_rx[rx_beam]
    power_mw = 10 ** ((rx_power_dbm - tx_power_dbm(codebook, eirp_dbm)) / 10) / (g_tx * g_rx)
    return GroundTruthMPC(delay_s, dod, doa, 0.0, 0.0, np.sqrt(power_mw) * np.exp(1j * phase),
                          doppler_hz, SINGLE_BOUNCE)


def fixed_scene(*mpcs, duration_s=(0.0, 1.0)):
    return FixedMPCScene(tuple(mpcs), duration_s)


def single_pair_schedule(beam=9, reps=1, snapshots=1, waveform_s=2e-6, guard_s=2e-6,
                         burst_period_s=60e-3, bursts=1):
    return SweepSchedule((beam,), (beam,), waveform_s, guard_s, reps, snapshots, burst_period_s,
                         bursts)
