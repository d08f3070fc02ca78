# %% [markdown]
# # From tracks to scored action tubes
#
# Tracks only say who is where. To get action tubes we score every frame of
# a track, keep the classes that rank in the top k often enough, and cut the
# track down to those frames.

# %%
import numpy as np

from qmmtube.encoder import TrainConfig, train_encoder
from qmmtube.evaluation import format_ap_report, frame_map, video_map
from qmmtube.linking import LinkConfig, qmm_link
from qmmtube.scoring import ScoringConfig, build_tubes, oracle_scorer
from qmmtube.sim import category_scenario, generate_scenario

scen = generate_scenario(category_scenario("mixed", seed=3, n_persons=3, frames=48))
videos = [generate_scenario(category_scenario("mixed", 100 + i, n_persons=4, frames=40)).records
          for i in range(4)]
encoder, _ = train_encoder(videos, TrainConfig(tau_p=0.5, clips_per_epoch=32), seed=0)
tracks = qmm_link(scen.frames(), encoder, LinkConfig(tau_p=0.5, tau_s=0.5, tau_k_prime=8))
print(len(tracks), "tracks for", len(scen.gts), "people")

# %% [markdown]
# There is no action head in this package, so a stand-in scorer peaks at the
# true label of each frame and adds noise. Raising the noise shows how the
# metrics degrade.

# %%
n_actions = scen.config.n_actions
scoring = ScoringConfig(k=1, tau_k=8, no_action=n_actions)
for sigma in (0.0, 1.0, 2.5):
    tubes = [t for tr in tracks
             for t in build_tubes(tr, oracle_scorer(tr, scen.gts, n_actions, sigma=sigma, seed=1), scoring)]
    print(f"sigma={sigma}: {len(tubes)} tubes")
    print(format_ap_report(video_map(scen.gts, tubes, 0.5, no_action=n_actions)))
    print(format_ap_report(frame_map(scen.gts, tubes, 0.5, no_action=n_actions)))

# %% [markdown]
# Even with clean scores the fast mover costs AP: its track broke in two, and
# neither half overlaps the whole ground-truth tube well enough.
#
# A tube's score is the mean class score over the frames where the class
# made the top k, and it is zero when that happens on tau_k frames or
# fewer. Noisy scores split a person's frames across classes, so each
# tube gets shorter and less confident.
