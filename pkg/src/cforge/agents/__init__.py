from .ddpg import S_CAP, DDPGAgent, ddpg_act, ddpg_update, map_actions, polyak_update
from .monitor import RewardMonitor, monitor_observe
from .rainbow import (N_ATOMS, N_TECHNIQUES, RainbowAgent, distributional_projection, rainbow_act,
                      rainbow_update)
from .replay import PrioritizedReplay, SumTree
from .state import STATE_DIM, StateBuilder, build_state, raw_state
