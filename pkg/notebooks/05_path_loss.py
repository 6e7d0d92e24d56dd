# %% [markdown]
# # Path-loss fitting
#
# LOS links between 30 and 122 m are simulated without noise, the received
# power is read off the boresight beam pair, and close-in (CI) and
# alpha-beta-gamma (ABG) models are fitted to the resulting path loss.

# %%
import numpy as np

from mmsounder import analysis as an
from mmsounder.beamforming import build_codebook
from mmsounder.calibration import identity_response
from mmsounder.scene import Pose, PropagationScene, free_space_path_loss_db
from mmsounder.sounder import ReceiverConfig, SweepSchedule, run_sweep
from mmsounder.waveform import MultitoneSpec, optimize_phases

spec = optimize_phases(MultitoneSpec.sounder_default())
cb = build_codebook()
cal = identity_response(spec.tone_frequencies_hz)
gain = cb.beams[9].boresight_gain_dbi
print(f"FSPL at 6 m: {free_space_path_loss_db(6.0, 27.85e9):.2f} dB")

# %%
rng = np.random.default_rng(0)
d = np.linspace(30.0, 122.0, 20)
pl = {}
for sigma in (0.0, 1.0):
    values = []
    for dist, extra in zip(d, rng.normal(0.0, sigma, d.size)):
        scene = PropagationScene(Pose((0.0, 0.0, 5.0)), Pose((dist, 0.0, 5.0), 180.0),
                                 los_extra_loss_db=extra)
        rec = run_sweep(scene, spec, cb, cb, SweepSchedule((9,), (9,), snapshots_per_burst=1),
                        receiver=ReceiverConfig(add_noise=False))
        rx_dbm = 10 * np.log10(an.pas(an.directional_pdp(rec, cal)[0])[0, 0])
        values.append(rec.header.tx_power_dbm + 2 * gain - rx_dbm)
    pl[sigma] = np.array(values)

# %%
for sigma, values in pl.items():
    ci = an.fit_path_loss(d, values, "close-in")
    abg = an.fit_path_loss(d, values, "alpha-beta-gamma")
    print(f"shadowing {sigma:g} dB: CI n = {ci.params['n']:.3f} "
          f"(sigma {ci.shadowing_sigma_db:.2f} dB); ABG alpha = {abg.params['alpha']:.3f}, "
          f"beta = {abg.params['beta']:.2f} dB")
