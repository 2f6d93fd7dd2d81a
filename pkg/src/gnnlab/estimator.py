"""Scikit-learn style estimator wrapping the training loop.

`GraphNodeClassifier` follows the fit/predict/get_params/set_params protocol
so it composes with sklearn tooling (clone, grid search over configs). The
"X" of this estimator is a GraphDataset: features, edges, and masks travel
together.
"""

import numpy as np

from .models import GraphContext
from .train import TrainConfig, preset_configs, train_model
from .tensor import row_softmax


class GraphNodeClassifier:
    """Semi-supervised node classifier over one citation graph.

    Parameters mirror the model/train configuration; unset ones fall back to
    the per-variant preset. fit() trains on the dataset's train mask with
    early stopping on the validation mask.
    """

    _PARAM_NAMES = (
        "variant", "depth", "hidden", "dropout", "alpha", "theta", "heads",
        "jk_combine", "gate_init", "cognet_switch", "lr", "weight_decay",
        "weight_decay2", "max_epochs", "patience", "seed", "drop_edge_rate",
    )

    def __init__(self, variant="GCN", depth=2, hidden=None, dropout=None,
                 alpha=None, theta=None, heads=None, jk_combine=None,
                 gate_init=None, cognet_switch=None, lr=None,
                 weight_decay=None, weight_decay2=None, max_epochs=None,
                 patience=None, seed=0, drop_edge_rate=None):
        self.variant = variant
        self.depth = depth
        self.hidden = hidden
        self.dropout = dropout
        self.alpha = alpha
        self.theta = theta
        self.heads = heads
        self.jk_combine = jk_combine
        self.gate_init = gate_init
        self.cognet_switch = cognet_switch
        self.lr = lr
        self.weight_decay = weight_decay
        self.weight_decay2 = weight_decay2
        self.max_epochs = max_epochs
        self.patience = patience
        self.seed = seed
        self.drop_edge_rate = drop_edge_rate

    # -- sklearn protocol

    def get_params(self, deep=True):
        return {name: getattr(self, name) for name in self._PARAM_NAMES}

    def set_params(self, **params):
        for name, value in params.items():
            if name not in self._PARAM_NAMES:
                raise ValueError(f"unknown parameter: {name}")
            setattr(self, name, value)
        return self

    # -- configuration

    def _configs(self):
        overrides = {
            name: getattr(self, name) for name in self._PARAM_NAMES
            if name not in ("variant", "depth") and getattr(self, name) is not None
        }
        return preset_configs(self.variant, depth=self.depth, **overrides)

    # -- estimation

    def fit(self, dataset, y=None):
        """Train on the dataset's train mask; y is ignored (labels live in
        the dataset). Returns self."""
        model_cfg, train_cfg = self._configs()
        self.ctx_ = GraphContext(dataset)
        self.metrics_, self.model_ = train_model(dataset, model_cfg, train_cfg,
                                                 ctx=self.ctx_)
        self.classes_ = np.arange(dataset.c)
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise RuntimeError("estimator is not fitted; call fit() first")

    def decision_function(self, dataset=None):
        self._check_fitted()
        ctx = self.ctx_ if dataset is None else GraphContext(dataset)
        return self.model_.forward(ctx).data

    def predict_proba(self, dataset=None):
        self._check_fitted()
        ctx = self.ctx_ if dataset is None else GraphContext(dataset)
        return row_softmax(self.model_.forward(ctx)).data

    def predict(self, dataset=None):
        return np.argmax(self.decision_function(dataset), axis=1)

    def score(self, dataset=None, y=None, mask="test"):
        """Accuracy on a named mask ('train' | 'val' | 'test') or a boolean
        node mask."""
        self._check_fitted()
        ds = dataset if dataset is not None else self.ctx_.ds
        if isinstance(mask, str):
            mask = getattr(ds, f"{mask}_mask")
        preds = self.predict(ds if dataset is not None else None)
        mask = np.asarray(mask, dtype=bool)
        return float(np.mean(preds[mask] == ds.labels[mask]))
