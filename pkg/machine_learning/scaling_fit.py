"""
Exponential Sensitivity Law Fit
Uses Linear Regression on ln(shift / strength) against a size feature:
- lattices: chi_sum of the measurand cell, slope ln(lambda / lambda')
- circuits: number of units, slope ln(C1 / C2)
Saturated rows are excluded before fitting
"""
import logging
import os
import sys
from datetime import datetime
from typing import Dict, Optional, Sequence

# Add parent directory to path
sys.path.append(os.path.dirname(os.path.dirname(__file__)))

import joblib
import numpy as np
import pandas as pd
from sklearn.linear_model import LinearRegression
from sklearn.metrics import r2_score

from exceptions import ValidationError

logger = logging.getLogger(__name__)


class ScalingLawFit:
    """Fits ln(shift / strength) = intercept + slope * feature"""

    def __init__(self, feature: str = 'chi_sum', target: str = 'delta_exact', strength: str = 'gamma',
                 model_path: Optional[str] = None):
        self.feature = feature
        self.target = target
        self.strength = strength
        self.model_path = model_path
        self.model = None
        self.is_trained = False

        # Model metadata
        self.training_date = None
        self.training_samples = 0
        self.r2 = float('nan')

        if model_path and os.path.exists(model_path):
            self.load_model()

    def prepare_features(self, data: pd.DataFrame):
        """Feature column and log-gain target, dropping saturated and non-positive rows"""
        if not isinstance(data, pd.DataFrame):
            data = pd.DataFrame(data)
        missing = [c for c in (self.feature, self.target, self.strength) if c not in data.columns]
        if missing:
            raise ValidationError(f"fit data lacks columns {missing}", path="params.fit")

        rows = data
        if 'saturated' in rows.columns:
            rows = rows[~rows['saturated'].astype(bool)]
        shift = pd.to_numeric(rows[self.target], errors='coerce')
        strength = pd.to_numeric(rows[self.strength], errors='coerce')
        usable = (shift > 0) & (strength > 0) & np.isfinite(shift) & np.isfinite(strength)
        rows = rows[usable]

        X = rows[[self.feature]].astype(float).to_numpy()
        y = np.log(shift[usable].to_numpy() / strength[usable].to_numpy())
        return X, y

    def train(self, data: pd.DataFrame) -> Dict:
        """Fit the law; returns slope, intercept, r2 and the number of rows used"""
        X, y = self.prepare_features(data)
        if len(y) < 2 or np.unique(X[:, 0]).size < 2:
            raise ValidationError("need at least two distinct feature values to fit a slope", path="params.fit")

        self.model = LinearRegression()
        self.model.fit(X, y)
        self.r2 = float(r2_score(y, self.model.predict(X))) if len(y) > 2 else 1.0
        self.training_date = datetime.now()
        self.training_samples = len(y)
        self.is_trained = True

        logger.info(f"Fitted slope {self.slope:.4f} (r2={self.r2:.4f}) on {len(y)} rows")
        return {
            'slope': self.slope,
            'intercept': self.intercept,
            'r2': self.r2,
            'samples': self.training_samples,
            'feature': self.feature,
        }

    @property
    def slope(self) -> float:
        if not self.is_trained:
            raise ValueError("Model not trained")
        return float(self.model.coef_[0])

    @property
    def intercept(self) -> float:
        if not self.is_trained:
            raise ValueError("Model not trained")
        return float(self.model.intercept_)

    def predict(self, features: Sequence[float], strength: Sequence[float]) -> np.ndarray:
        """Shift predicted by the fitted law"""
        if not self.is_trained:
            raise ValueError("Model not trained")
        X = np.asarray(features, dtype=float).reshape(-1, 1)
        return np.exp(self.model.predict(X)) * np.asarray(strength, dtype=float)

    def save_model(self):
        if not self.is_trained:
            raise ValueError("Cannot save untrained model")
        if not self.model_path:
            raise ValueError("No model path configured")

        directory = os.path.dirname(self.model_path)
        if directory:
            os.makedirs(directory, exist_ok=True)

        model_data = {
            'model': self.model,
            'feature': self.feature,
            'target': self.target,
            'strength': self.strength,
            'r2': self.r2,
            'trained_date': datetime.now().isoformat(),
            'training_samples': self.training_samples,
        }
        joblib.dump(model_data, self.model_path)

    def load_model(self) -> bool:
        if not self.model_path or not os.path.exists(self.model_path):
            return False

        try:
            model_data = joblib.load(self.model_path)
            self.model = model_data.get('model')
            self.feature = model_data.get('feature', self.feature)
            self.target = model_data.get('target', self.target)
            self.strength = model_data.get('strength', self.strength)
            self.r2 = model_data.get('r2', float('nan'))
            self.training_samples = model_data.get('training_samples', 0)
            self.is_trained = self.model is not None

            trained_date = model_data.get('trained_date', 'Unknown')
            logger.info(f"Scaling fit loaded (trained: {trained_date}, samples: {self.training_samples})")
            return self.is_trained
        except Exception as e:
            logger.error(f"Error loading scaling fit: {e}")
            return False


def fit_sensitivity_law(curve: pd.DataFrame, feature: str = 'chi_sum', target: str = 'delta_exact',
                        strength: str = 'gamma', expected_slope: Optional[float] = None) -> Dict:
    """Fit a curve and report the slope against an expected ln(ratio), if given"""
    try:
        fit = ScalingLawFit(feature=feature, target=target, strength=strength)
        metrics = fit.train(curve)
    except ValidationError as e:
        logger.warning(f"Scaling fit skipped: {e}")
        return {'success': False, 'message': str(e)}

    result = {'success': True, 'message': f"Fitted {metrics['samples']} rows", **metrics}
    if expected_slope is not None:
        result['expected_slope'] = float(expected_slope)
        result['slope_error'] = float(abs(metrics['slope'] - expected_slope) / abs(expected_slope))
    return result
