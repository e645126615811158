from __future__ import annotations

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .tree import TreeConfig, apply_tree, grow, infer_candidates, predict_mu, segment_table


class NegBinTree(RegressorMixin, BaseEstimator):
    """Negative binomial model tree for count targets.

    ``X`` must be a DataFrame of split candidates; see
    :func:`~topicmob.mob.tree.infer_candidates` for how column kinds are
    inferred. ``predict`` returns the segment mean, ``apply`` the segment id.

    Parameters
    ----------
    alpha : float
        Significance level for the Bonferroni-adjusted instability tests.
    min_segment : float
        Minimum segment size; values below 1 are a fraction of n.
    """

    def __init__(
        self,
        alpha=1e-4,
        min_segment=0.004,
        max_depth=None,
        bonferroni=True,
        exhaustive_level_limit=10,
        trim=0.1,
        categorical=(),
        ordered=(),
    ):
        self.alpha = alpha
        self.min_segment = min_segment
        self.max_depth = max_depth
        self.bonferroni = bonferroni
        self.exhaustive_level_limit = exhaustive_level_limit
        self.trim = trim
        self.categorical = categorical
        self.ordered = ordered

    def _config(self) -> TreeConfig:
        return TreeConfig(
            alpha=self.alpha,
            min_segment=self.min_segment,
            max_depth=self.max_depth,
            bonferroni=self.bonferroni,
            exhaustive_level_limit=self.exhaustive_level_limit,
            trim=self.trim,
        )

    def fit(self, X, y):
        if not isinstance(X, pd.DataFrame):
            X = pd.DataFrame(np.asarray(X)).rename(columns=str)
        y = np.asarray(y)
        candidates = infer_candidates(X, categorical=self.categorical, ordered=self.ordered)
        self.tree_ = grow(X, y, candidates, self._config())
        self.n_segments_ = self.tree_.n_segments
        self.feature_names_in_ = np.array(X.columns, dtype=object)
        return self

    def _frame(self, X):
        check_is_fitted(self, "tree_")
        if not isinstance(X, pd.DataFrame):
            X = pd.DataFrame(np.asarray(X), columns=self.feature_names_in_)
        return X

    def apply(self, X):
        return apply_tree(self.tree_, self._frame(X))

    def predict(self, X):
        return predict_mu(self.tree_, self._frame(X))

    def segment_table(self):
        check_is_fitted(self, "tree_")
        return segment_table(self.tree_)
