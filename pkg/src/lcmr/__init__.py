"""Local and centralized memory recommender (LCMR) with a small numpy autodiff core."""

from .baselines import MlpConfig, MlpModel, PopularityTable, itempop_scores
from .corpus import InteractionSet, ItemCorpus, LooSplit, Vocabulary, loo_split
from .evaluation import EvalReport, evaluate, hr_at_k, ndcg_at_k, rank_of_positive
from .model import LcmrConfig, LcmrModel
from .ndgrad import AdamConfig, Parameter, Tape
from .train import TrainConfig, TrainHistory, fit, train_epoch

__version__ = "0.1.0"
