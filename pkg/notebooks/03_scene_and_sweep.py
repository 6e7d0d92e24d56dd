# %% [markdown]
# # Scene and sweep
#
# A geometric scene places TX, RX and moving scatterers in 3-D and turns
# them into discrete multipath components (MPCs) at any instant. The
# blockage template has a LOS path and a wall reflection; a passing
# vehicle first blocks the reflection and then the LOS.

# %%
import numpy as np

from mmsounder.beamforming import build_codebook
from mmsounder.scene import case2_blockage
from mmsounder.sounder import ReceiverConfig, SweepSchedule, link_budget, run_sweep
from mmsounder.waveform import MultitoneSpec, optimize_phases

scene = case2_blockage("truck")
for t in (1.0, 4.0, 7.0):
    print(f"t = {t:.0f} s")
    for m in scene.snapshot_mpcs(t):
        print(f"  {m.source:>14s}: delay {m.delay_s * 1e9:6.1f} ns, DoD {m.dod_azimuth_deg:+6.1f}, "
              f"DoA {m.doa_azimuth_deg:+6.1f} deg, power {m.power_db:7.2f} dB")

# %% [markdown]
# The receiver's link budget sets what is measurable.

# %%
lb = link_budget(ReceiverConfig(), tx_eirp_dbm=57.0, rx_beam_gain_dbi=19.0)
print(f"sensitivity {lb.sensitivity_dbm:.1f} dBm, EIS {lb.eis_dbm:.1f} dBm, "
      f"max path loss {lb.max_path_loss_db:.1f} dB, dynamic range {lb.dynamic_range_db:.1f} dB")

# %% [markdown]
# One dynamic burst: 10 x 10 beam pairs at 4 us each, so 400 us per
# snapshot, 20 snapshots per burst.

# %%
spec = optimize_phases(MultitoneSpec.sounder_default())
cb = build_codebook()
sched = SweepSchedule.dynamic()
print(f"pair {sched.pair_time_ns / 1e3:g} us, snapshot {sched.snapshot_time_ns / 1e3:g} us")
rec = run_sweep(scene, spec, cb, cb, sched, seed=1, start_time_s=1.0)
print(f"{rec.num_snapshots} snapshots of shape {rec.snapshots[0].samples.shape}, "
      f"AGC gains {sorted(set(rec.gains_db.tolist()))} dB")
