"""Tabular laboratory for pessimistic ensemble preference optimization."""

from .preference import (sigma, sigma_pess, sigma_pess_inv, tie_probability, bt_win_prob,
                         quad_bound, lipschitz_bound)
from .tabular import (TabularEnv, HyperParams, FixedReward, GaussianReward, kl_divergence,
                      j_beta, concentrability, softmax_policy, optimal_policy)
from .datagen import (PreferenceDataset, CountTables, generate_dataset, build_counts,
                      partition)
from .member import MemberFit, fit_member, fit_ensemble, lambda_schedule, pess_dpo_loss
from .ensemble import (PessimisticAggregate, output_policy, worst_case_reward,
                       tie_upper_bound, ensemble_size, estimated_gap)
from .sampler import SampleOutcome, rejection_sample, trial_budget

__version__ = "0.1.0"
