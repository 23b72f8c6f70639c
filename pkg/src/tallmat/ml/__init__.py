"""Machine-learning drivers built only from engine operations."""

from .correlation import correlation
from .kmeans import KmeansResult, kmeans
from .lda import LdaModel, lda_predict, lda_train
from .logistic import LogisticModel, logistic_cost_grad, logistic_regression
from .metrics import accuracy, adjusted_rand_index
from .mvrnorm import mvrnorm
from .naive_bayes import NaiveBayesModel, naive_bayes_predict, naive_bayes_train
from .pagerank import PagerankState, pagerank
from .pca import PcaResult, pca

__all__ = [
    "correlation", "kmeans", "KmeansResult", "lda_train", "lda_predict", "LdaModel",
    "logistic_regression", "logistic_cost_grad", "LogisticModel", "accuracy",
    "adjusted_rand_index", "mvrnorm", "naive_bayes_train", "naive_bayes_predict",
    "NaiveBayesModel", "pagerank", "PagerankState", "pca", "PcaResult",
]
