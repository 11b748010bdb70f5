# Copyright 2026 The cnfit Authors
#
#    Licensed under the Apache License, Version 2.0 (the "License"); you may
#    not use this file except in compliance with the License. You may obtain
#    a copy of the License at
#
#         http://www.apache.org/licenses/LICENSE-2.0
#
#    Unless required by applicable law or agreed to in writing, software
#    distributed under the License is distributed on an "AS IS" BASIS, WITHOUT
#    WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied. See the
#    License for the specific language governing permissions and limitations
#    under the License.

"""
Gaussian-process regression over points of the unit hypercube.

Two stationary kernels are available, both with an amplitude ``theta0``
and one length scale per dimension (ARD). With
``r^2 = sum_d (x_d - x'_d)^2 / l_d^2``:

    se:        theta0 * exp(-r^2 / 2)
    matern52:  theta0 * (1 + sqrt(5) r + 5/3 r^2) * exp(-sqrt(5) r)
"""

import logging
import math

import numpy as np
from scipy import linalg
from scipy.spatial import distance

from cnfit import exceptions

SE_ARD = 'se'
MATERN52 = 'matern52'
KERNELS = (SE_ARD, MATERN52)

JITTERS = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)

# Log-space search box for the fitted hyperparameters.
AMPLITUDE_BOUNDS = (1e-2, 1e2)
LENGTHSCALE_BOUNDS = (1e-2, 1e1)
NOISE_CEILING = 1.0

FIT_STARTS = 16
FIT_ITERATIONS = 50
FIT_MIN_STEP = 1e-2

logger = logging.getLogger(__name__)


def _check_hyperparameters(kind, theta0, lengthscales):
    if kind not in KERNELS:
        raise exceptions.ConfigError(
            "unknown kernel '%s'; expected one of %s"
            % (kind, ', '.join(KERNELS)), field='kernel')
    lengthscales = np.atleast_1d(np.asarray(lengthscales, dtype=np.float64))
    if not theta0 > 0 or np.any(~(lengthscales > 0)):
        raise exceptions.ConfigError(
            "kernel amplitude and length scales must be positive")
    return lengthscales


def kernel_matrix(kind, X1, X2, theta0, lengthscales):
    """Covariances between the rows of ``X1`` and ``X2``."""
    ls = _check_hyperparameters(kind, theta0, lengthscales)
    X1 = np.atleast_2d(np.asarray(X1, dtype=np.float64))
    X2 = np.atleast_2d(np.asarray(X2, dtype=np.float64))
    if X1.shape[1] != X2.shape[1] or X1.shape[1] != ls.size:
        raise exceptions.ShapeError(
            "points of dimension %d and %d with %d length scales"
            % (X1.shape[1], X2.shape[1], ls.size))
    r2 = distance.cdist(X1 / ls, X2 / ls, 'sqeuclidean')
    if kind == SE_ARD:
        return theta0 * np.exp(-0.5 * r2)
    r = np.sqrt(5.0 * r2)
    return theta0 * (1.0 + r + r * r / 3.0) * np.exp(-r)


def kernel_eval(kind, x, x2, theta0, lengthscales):
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    x2 = np.atleast_1d(np.asarray(x2, dtype=np.float64))
    if x.shape != x2.shape:
        raise exceptions.ShapeError(
            "points of shape %s and %s" % (x.shape, x2.shape))
    return float(kernel_matrix(kind, x[np.newaxis], x2[np.newaxis], theta0,
                               lengthscales)[0, 0])


class GpModel(object):
    """A GP conditioned on observations with fixed hyperparameters.

    ``y`` is given in objective units; it is shifted by ``y_mean`` and
    divided by ``y_scale`` before conditioning, so ``theta0`` and
    ``noise`` live in the standardized units.
    """

    def __init__(self, X, y, kind=MATERN52, theta0=1.0, lengthscales=None,
                 noise=0.0, y_mean=0.0, y_scale=1.0):
        self.X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        self.y = np.asarray(y, dtype=np.float64).ravel()
        if self.X.shape[0] != self.y.size:
            raise exceptions.ShapeError(
                "%d points with %d observations"
                % (self.X.shape[0], self.y.size))
        if lengthscales is None:
            lengthscales = np.ones(self.X.shape[1])
        self.lengthscales = _check_hyperparameters(kind, theta0,
                                                   lengthscales)
        if noise < 0:
            raise exceptions.ConfigError("noise variance must be >= 0")
        self.kind = kind
        self.theta0 = float(theta0)
        self.noise = float(noise)
        self.y_mean = float(y_mean)
        self.y_scale = float(y_scale)
        self._factorize()

    @property
    def dim(self):
        return self.X.shape[1]

    def covariance(self, X1, X2):
        return kernel_matrix(self.kind, X1, X2, self.theta0,
                             self.lengthscales)

    def _factorize(self):
        K = self.covariance(self.X, self.X)
        n = K.shape[0]
        for jitter in JITTERS:
            try:
                self._factor = linalg.cho_factor(
                    K + (self.noise + jitter) * np.eye(n), lower=True)
            except linalg.LinAlgError:
                continue
            if jitter:
                logger.debug("covariance factorized with jitter %g", jitter)
            self.jitter = jitter
            self._z = (self.y - self.y_mean) / self.y_scale
            self._alpha = linalg.cho_solve(self._factor, self._z)
            return
        raise exceptions.FactorizationError(
            "covariance of %d points is not positive definite even with "
            "jitter %g (condition number %.3g)"
            % (n, JITTERS[-1], np.linalg.cond(K + self.noise * np.eye(n))))

    def log_marginal_likelihood(self):
        """Log evidence of the standardized observations."""
        lower = self._factor[0]
        n = self._z.size
        return float(-0.5 * np.dot(self._z, self._alpha) -
                     np.sum(np.log(np.diag(lower))) -
                     0.5 * n * math.log(2 * math.pi))

    def predict(self, Xstar, standardized=False):
        """Posterior means and variances at the rows of ``Xstar``, in
        objective units unless ``standardized``."""
        Xstar = np.atleast_2d(np.asarray(Xstar, dtype=np.float64))
        if Xstar.shape[1] != self.dim:
            raise exceptions.ShapeError(
                "query points have dimension %d, model has %d"
                % (Xstar.shape[1], self.dim))
        kstar = self.covariance(self.X, Xstar)
        mean = kstar.T.dot(self._alpha)
        solved = linalg.cho_solve(self._factor, kstar)
        var = self.theta0 - np.sum(kstar * solved, axis=0)
        var = np.maximum(var, 0.0)
        if standardized:
            return mean, var
        return (mean * self.y_scale + self.y_mean,
                var * self.y_scale * self.y_scale)


def gp_posterior(model, xstar):
    """``(mean, variance)`` at a single point."""
    xstar = np.atleast_1d(np.asarray(xstar, dtype=np.float64))
    if xstar.ndim != 1:
        raise exceptions.ShapeError("expected a single point, got shape %s"
                                    % (xstar.shape,))
    mean, var = model.predict(xstar[np.newaxis])
    return float(mean[0]), float(var[0])


def _unpack(theta, d):
    values = np.exp(theta)
    return values[0], values[1:d + 1], values[d + 1]


def _objective(X, y, kind, theta, y_mean, y_scale):
    d = X.shape[1]
    theta0, ls, noise = _unpack(theta, d)
    try:
        model = GpModel(X, y, kind, theta0, ls, noise, y_mean, y_scale)
    except exceptions.FactorizationError:
        return -np.inf, None
    return model.log_marginal_likelihood(), model


def gp_fit(X, y, kind=MATERN52, noise_floor=1e-6, normalize=True, rng=None,
           starts=FIT_STARTS, iterations=FIT_ITERATIONS):
    """Choose kernel hyperparameters by maximizing the log marginal
    likelihood and return the conditioned model.

    The search is a multi-start coordinate descent over the logs of the
    amplitude, the length scales and the noise variance; each sweep tries
    a step up and down on every coordinate and the step halves after a
    sweep without improvement.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).ravel()
    n, d = X.shape
    if n < 2 or y.size != n:
        raise exceptions.DataError(
            "need at least 2 points with one observation each, got %d "
            "points and %d observations" % (n, y.size))
    if np.any(X < 0.0) or np.any(X > 1.0):
        raise exceptions.DataError("points must lie in the unit hypercube")
    if not np.all(np.isfinite(y)):
        raise exceptions.DataError("observations must be finite")
    if noise_floor <= 0:
        raise exceptions.ConfigError("noise_floor must be > 0")
    rng = rng if rng is not None else np.random.default_rng(0)

    y_mean, y_scale = 0.0, 1.0
    if normalize:
        y_mean = float(np.mean(y))
        y_scale = float(np.std(y))
        if y_scale < 1e-12:
            y_scale = 1.0

    low = np.log(np.concatenate([[AMPLITUDE_BOUNDS[0]],
                                 np.full(d, LENGTHSCALE_BOUNDS[0]),
                                 [noise_floor]]))
    high = np.log(np.concatenate([[AMPLITUDE_BOUNDS[1]],
                                  np.full(d, LENGTHSCALE_BOUNDS[1]),
                                  [max(NOISE_CEILING, noise_floor)]]))
    first = np.log(np.concatenate([[1.0], np.full(d, 0.3),
                                   [max(1e-3, noise_floor)]]))
    initial = [np.clip(first, low, high)]
    initial.extend(rng.uniform(low, high) for _ in range(starts - 1))

    best_value, best_model = -np.inf, None
    for theta in initial:
        value, model = _objective(X, y, kind, theta, y_mean, y_scale)
        step = 1.0
        for _ in range(iterations):
            improved = False
            for i in range(theta.size):
                for direction in (1.0, -1.0):
                    trial = theta.copy()
                    trial[i] = np.clip(trial[i] + direction * step,
                                       low[i], high[i])
                    if trial[i] == theta[i]:
                        continue
                    trial_value, trial_model = _objective(
                        X, y, kind, trial, y_mean, y_scale)
                    if trial_value > value:
                        theta, value, model = trial, trial_value, trial_model
                        improved = True
                        break
            if not improved:
                step /= 2.0
                if step < FIT_MIN_STEP:
                    break
        if value > best_value:
            best_value, best_model = value, model

    if best_model is None:
        raise exceptions.FactorizationError(
            "no hyperparameter setting gave a factorizable covariance for "
            "%d points" % n)
    logger.debug("fitted %s GP: theta0 %.4g, length scales %s, noise %.3g, "
                 "log likelihood %.4f", kind, best_model.theta0,
                 np.array2string(best_model.lengthscales, precision=4),
                 best_model.noise, best_value)
    return best_model
