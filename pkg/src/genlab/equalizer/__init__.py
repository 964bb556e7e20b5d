from .model import (DESK_PROFILE, PAPER_PROFILE, PROFILES, EqualizerHyper, EqualizerModel,
                    backward, forward, init_model)
from .optim import AdamState, adam_step
from .training import (LearningCurve, TrainConfig, evaluate, finetune, pretrain, train_scratch,
                       windowize)

__all__ = ["DESK_PROFILE", "PAPER_PROFILE", "PROFILES", "EqualizerHyper", "EqualizerModel",
           "backward", "forward", "init_model", "AdamState", "adam_step", "LearningCurve",
           "TrainConfig", "evaluate", "finetune", "pretrain", "train_scratch", "windowize"]
