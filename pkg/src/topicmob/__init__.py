"""Topic-model split variables and negative binomial model trees for segmenting count data."""

from .corpus import (
    DocTermCounts,
    Report,
    TextVectorizer,
    Vocabulary,
    build_vocabulary,
    load_reports,
    remove_stopwords,
    stem,
    to_counts,
    tokenize,
)
from .lda import DocPosterior, LdaModel, TopicModel, e_step, fit_lda, hard_assign, init_lda, m_step, topic_terms
from .mob import NegBinTree, SplitVariable, Tree, TreeConfig, fluctuation_test, grow, segment_table
from .negbin import (
    NbFit,
    NbParams,
    deviance,
    fit_nb_intercept,
    fit_poisson_intercept,
    nb_logpmf,
    sample_nb,
    score_contributions,
)
from .validate import (
    MatchResult,
    ResamplePlan,
    fit_diagnostics,
    jaccard,
    match_segments,
    parameter_stability,
    resample,
    residual_acf,
    run_stability,
    stability_summary,
)

__version__ = "0.1.0"
