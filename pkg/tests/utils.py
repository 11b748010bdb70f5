import os

import fixtures
import numpy as np
import testtools


class TestCase(testtools.TestCase):

    def setUp(self):
        super(TestCase, self).setUp()
        if (os.environ.get('OS_STDOUT_CAPTURE') == 'True' or
                os.environ.get('OS_STDOUT_CAPTURE') == '1'):
            stdout = self.useFixture(fixtures.StringStream('stdout')).stream
            self.useFixture(fixtures.MonkeyPatch('sys.stdout', stdout))
        if (os.environ.get('OS_STDERR_CAPTURE') == 'True' or
                os.environ.get('OS_STDERR_CAPTURE') == '1'):
            stderr = self.useFixture(fixtures.StringStream('stderr')).stream
            self.useFixture(fixtures.MonkeyPatch('sys.stderr', stderr))

    def assertAllClose(self, expected, actual, atol=1e-12, rtol=0.0):
        expected = np.asarray(expected, dtype=np.float64)
        actual = np.asarray(actual, dtype=np.float64)
        self.assertEqual(expected.shape, actual.shape)
        if not np.allclose(actual, expected, atol=atol, rtol=rtol):
            self.fail("arrays differ (max abs diff %g):\n%s\n%s"
                      % (np.max(np.abs(actual - expected)), expected,
                         actual))

    def assertGradientClose(self, analytic, numeric, tolerance=1e-6):
        error = relative_error(analytic, numeric)
        if error >= tolerance:
            self.fail("max relative gradient error %g >= %g"
                      % (error, tolerance))


def random_tensor(rng, *shape):
    return rng.standard_normal(shape)


def numerical_gradient(func, x, h=1e-5):
    """Central differences of the scalar ``func`` with respect to every
    entry of ``x`` (perturbed in place and restored)."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=['multi_index'])
    for _ in it:
        index = it.multi_index
        original = x[index]
        x[index] = original + h
        plus = func()
        x[index] = original - h
        minus = func()
        x[index] = original
        grad[index] = (plus - minus) / (2.0 * h)
    return grad


def relative_error(analytic, numeric, floor=1e-8):
    """Largest elementwise ``|a - n| / max(|a|, |n|)``; entries with
    ``|a| + |n| < floor`` contribute their absolute difference."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    tiny = np.abs(analytic) + np.abs(numeric) < floor
    errors = np.where(tiny, diff, diff / np.where(tiny, 1.0, scale))
    return float(np.max(errors)) if errors.size else 0.0


def positive_tensor(rng, *shape):
    """Entries in [0.5, 1.5), so sums of products stay away from zero."""
    return rng.uniform(0.5, 1.5, size=shape)
