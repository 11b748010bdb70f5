import math

import numpy as np

from cnfit import exceptions
from cnfit import layers
from tests import utils

REFERENCE_LAYERS = ('conv(32,3,same), relu, conv(32,3,valid), relu, '
                    'pool(2,max), conv(64,3), relu, pool(2), conv(64,3), '
                    'relu, pool(2), dropout(0.25), flatten, dense(64), '
                    'relu, dropout(0.5), dense(4), softmax')

# random instances per gradient check
INSTANCES = 20


def reference_model():
    return layers.ModelSpec((1, 128, 128),
                            layers.parse_layer_list(REFERENCE_LAYERS), 4)


class ShapeInferenceTest(utils.TestCase):

    def test_reference_chain(self):
        shapes = [s for _, s in layers.infer_shapes(reference_model())]
        self.assertEqual([(1, 128, 128),
                          (32, 128, 128), (32, 128, 128),
                          (32, 126, 126), (32, 126, 126),
                          (32, 63, 63),
                          (64, 61, 61), (64, 61, 61),
                          (64, 30, 30),
                          (64, 28, 28), (64, 28, 28),
                          (64, 14, 14), (64, 14, 14),
                          (12544,),
                          (64,), (64,), (64,),
                          (4,), (4,)], shapes)

    def test_reference_parameter_counts(self):
        counts, total = layers.count_params(reference_model())
        self.assertEqual([320, 9248, 18496, 36928, 802880, 260],
                         [c for c in counts if c])
        self.assertEqual(320 + 9248 + 18496 + 36928 + 802880 + 260, total)

    def test_empty_layer_list(self):
        model = layers.ModelSpec((4, 1, 1), [], 4)
        self.assertEqual([(None, (4, 1, 1))], layers.infer_shapes(model))

    def test_minimal_window(self):
        model = layers.ModelSpec((1, 3, 3), [layers.Conv2d(1, 3)], 1)
        self.assertEqual((1, 1, 1), layers.infer_shapes(model)[-1][1])

    def test_non_positive_extent_names_layer(self):
        e = self.assertRaises(
            exceptions.ShapeError, layers.ModelSpec, (1, 4, 4),
            layers.parse_layer_list('conv(2,3), conv(2,3), conv(2,3)'), 2)
        self.assertEqual(1, e.index)
        self.assertIn('conv(2,3,valid', str(e))

    def test_output_must_match_class_count(self):
        self.assertRaises(exceptions.ShapeError, layers.ModelSpec,
                          (1, 4, 4), layers.parse_layer_list('flatten'), 3)

    def test_pool_floor(self):
        pool = layers.Pool2d(2)
        self.assertEqual((3, 31, 31), pool.output_shape((3, 63, 63)))


class LayerListTest(utils.TestCase):

    def test_text_round_trip(self):
        parsed = layers.parse_layer_list(REFERENCE_LAYERS)
        again = layers.parse_layer_list(layers.format_layer_list(parsed))
        self.assertEqual(parsed, again)

    def test_variables(self):
        parsed = layers.parse_layer_list('conv($filters,$k,same), '
                                         'dropout($p)',
                                         {'filters': 16, 'k': 5, 'p': 0.1})
        self.assertEqual(16, parsed[0].out_channels)
        self.assertEqual(5, parsed[0].kernel_size)
        self.assertEqual(0.1, parsed[1].p)

    def test_unknown_layer(self):
        self.assertRaises(exceptions.ConfigError,
                          layers.parse_layer_list, 'lstm(4)')

    def test_missing_argument(self):
        self.assertRaises(exceptions.ConfigError,
                          layers.parse_layer_list, 'conv(4)')

    def test_bad_dropout(self):
        self.assertRaises(exceptions.ConfigError,
                          layers.parse_layer_list, 'dropout(1.0)')

    def test_model_text_round_trip(self):
        model = layers.ModelSpec((1, 8, 8),
                                 layers.parse_layer_list(
                                     'conv(2,3,same), relu, pool(2), '
                                     'flatten, dense(3), softmax'),
                                 3, class_names=['a', 'b', 'c'],
                                 input_mean=0.25, input_std=0.5)
        again = layers.ModelSpec.from_text(model.to_text())
        self.assertEqual(model, again)
        self.assertEqual(['a', 'b', 'c'], again.class_names)
        self.assertEqual(0.25, again.input_mean)


class ConvolutionTest(utils.TestCase):

    def test_hand_example(self):
        x = [[[1, 2, 3], [4, 5, 6], [7, 8, 9]]]
        w = [[[[1, 0], [0, 1]]]]
        out = layers.conv2d_forward(x, w, [0.0])
        self.assertAllClose([[[6, 8], [12, 14]]], out)

    def test_identity_kernel(self):
        x = utils.random_tensor(np.random.default_rng(0), 2, 5, 4)
        w = np.zeros((2, 2, 1, 1))
        w[0, 0] = w[1, 1] = 1.0
        self.assertAllClose(x, layers.conv2d_forward(x, w, np.zeros(2)))

    def test_bias_only(self):
        out = layers.conv2d_forward(np.zeros((1, 4, 4)),
                                    np.ones((2, 1, 3, 3)), [1.5, -2.0],
                                    padding='same')
        self.assertEqual((2, 4, 4), out.shape)
        self.assertAllClose(np.full((4, 4), 1.5), out[0])
        self.assertAllClose(np.full((4, 4), -2.0), out[1])

    def test_channel_mismatch(self):
        e = self.assertRaises(exceptions.ShapeError, layers.conv2d_forward,
                              np.zeros((3, 4, 4)), np.zeros((1, 2, 3, 3)),
                              np.zeros(1))
        self.assertIn('(3, 4, 4)', str(e))
        self.assertIn('(1, 2, 3, 3)', str(e))

    def test_zero_cotangent(self):
        rng = np.random.default_rng(1)
        state = layers.LayerState()
        out = layers.conv2d_forward(utils.random_tensor(rng, 2, 5, 5),
                                    utils.random_tensor(rng, 3, 2, 3, 3),
                                    np.zeros(3), state=state)
        for g in layers.conv2d_backward(np.zeros_like(out), state):
            self.assertFalse(np.any(g))

    def test_backward_without_forward(self):
        self.assertRaises(exceptions.ContractViolation,
                          layers.conv2d_backward, np.zeros((1, 1, 1)),
                          layers.LayerState())

    def _check_gradients(self, seed, padding):
        rng = np.random.default_rng(seed)
        k = int(rng.integers(1, 4))
        stride = 1 + seed % 2
        c_in, c_out = (int(n) for n in rng.integers(1, 4, size=2))
        h, width = (int(n) for n in rng.integers(k, k + 4, size=2))
        lead = (2,) if seed % 3 == 0 else ()
        x = utils.positive_tensor(rng, *(lead + (c_in, h, width)))
        w = utils.positive_tensor(rng, c_out, c_in, k, k)
        b = utils.positive_tensor(rng, c_out)
        state = layers.LayerState()
        out = layers.conv2d_forward(x, w, b, stride, padding, state=state)
        proj = utils.positive_tensor(rng, *out.shape)

        def loss():
            return np.sum(layers.conv2d_forward(x, w, b, stride, padding) *
                          proj)

        grad_x, grad_w, grad_b = layers.conv2d_backward(proj, state)
        self.assertGradientClose(grad_x, utils.numerical_gradient(loss, x))
        self.assertGradientClose(grad_w, utils.numerical_gradient(loss, w))
        self.assertGradientClose(grad_b, utils.numerical_gradient(loss, b))

    def test_gradient_valid(self):
        for seed in range(INSTANCES):
            self._check_gradients(seed, 'valid')

    def test_gradient_same(self):
        for seed in range(INSTANCES):
            self._check_gradients(seed, 'same')

    def test_same_padding_keeps_extent(self):
        for k in (1, 2, 3, 4):
            out = layers.conv2d_forward(np.ones((1, 5, 6)),
                                        np.ones((2, 1, k, k)), np.zeros(2),
                                        padding='same')
            self.assertEqual((2, 5, 6), out.shape)


class PoolingTest(utils.TestCase):

    def test_mean(self):
        self.assertAllClose([[[2.5]]],
                            layers.pool2d_forward([[[1, 2], [3, 4]]], 2,
                                                  'mean'))

    def test_max(self):
        self.assertAllClose([[[4]]],
                            layers.pool2d_forward([[[1, 2], [3, 4]]], 2))

    def test_window_too_large(self):
        self.assertRaises(exceptions.ShapeError, layers.pool2d_forward,
                          np.zeros((1, 1, 1)), 2)

    def test_mean_backward_spreads(self):
        state = layers.LayerState()
        layers.pool2d_forward([[[1, 2], [3, 4]]], 2, 'mean', state=state)
        self.assertAllClose([[[0.25, 0.25], [0.25, 0.25]]],
                            layers.pool2d_backward([[[1.0]]], state))

    def test_max_backward_routes(self):
        state = layers.LayerState()
        layers.pool2d_forward([[[1, 2], [3, 4]]], 2, 'max', state=state)
        self.assertAllClose([[[0, 0], [0, 1]]],
                            layers.pool2d_backward([[[1.0]]], state))

    def test_dropped_edge_gets_zero_gradient(self):
        state = layers.LayerState()
        out = layers.pool2d_forward(np.ones((1, 5, 5)), 2, 'mean',
                                    state=state)
        grad = layers.pool2d_backward(np.ones_like(out), state)
        self.assertFalse(np.any(grad[:, 4, :]))
        self.assertFalse(np.any(grad[:, :, 4]))

    def _check_gradient(self, seed, mode):
        rng = np.random.default_rng(seed)
        size = int(rng.integers(2, 4))
        channels = int(rng.integers(1, 4))
        h, width = (int(n) for n in rng.integers(size, size + 5, size=2))
        lead = (2,) if seed % 3 == 0 else ()
        x = utils.random_tensor(rng, *(lead + (channels, h, width)))
        state = layers.LayerState()
        out = layers.pool2d_forward(x, size, mode, state=state)
        proj = utils.positive_tensor(rng, *out.shape)

        def loss():
            return np.sum(layers.pool2d_forward(x, size, mode) * proj)

        self.assertGradientClose(layers.pool2d_backward(proj, state),
                                 utils.numerical_gradient(loss, x))

    def test_gradient_max(self):
        for seed in range(INSTANCES):
            self._check_gradient(seed, 'max')

    def test_gradient_mean(self):
        for seed in range(INSTANCES):
            self._check_gradient(seed, 'mean')

    def test_mean_backward_conserves_mass(self):
        rng = np.random.default_rng(12)
        for size, shape in ((2, (3, 6, 7)), (3, (2, 2, 9, 10))):
            state = layers.LayerState()
            out = layers.pool2d_forward(utils.random_tensor(rng, *shape),
                                        size, 'mean', state=state)
            grad_out = utils.random_tensor(rng, *out.shape)
            grad_in = layers.pool2d_backward(grad_out, state)
            self.assertAlmostEqual(np.sum(grad_out), np.sum(grad_in),
                                   delta=1e-12)

    def test_max_backward_conserves_mass(self):
        state = layers.LayerState()
        rng = np.random.default_rng(13)
        out = layers.pool2d_forward(utils.random_tensor(rng, 2, 7, 6), 2,
                                    state=state)
        grad_out = utils.random_tensor(rng, *out.shape)
        grad_in = layers.pool2d_backward(grad_out, state)
        self.assertEqual(sorted(grad_out.ravel()),
                         sorted(grad_in[grad_in != 0.0]))


class ElementwiseTest(utils.TestCase):

    def test_relu(self):
        self.assertAllClose([0, 0, 2], layers.relu([-1, 0, 2]))

    def test_relu_backward_mask(self):
        state = layers.LayerState()
        layers.relu([-1, 2], state=state)
        self.assertAllClose([0, 5], layers.relu_backward([5, 5], state))

    def test_relu_gradient(self):
        for seed in range(INSTANCES):
            rng = np.random.default_rng(seed)
            shape = tuple(int(n) for n in rng.integers(1, 6, size=2))
            # keep every input at least 0.1 from the kink
            x = (rng.choice([-1.0, 1.0], size=shape) *
                 rng.uniform(0.1, 1.5, size=shape))
            proj = utils.positive_tensor(rng, *shape)
            state = layers.LayerState()
            layers.relu(x, state=state)
            self.assertGradientClose(
                layers.relu_backward(proj, state),
                utils.numerical_gradient(
                    lambda: np.sum(layers.relu(x) * proj), x))

    def test_dropout_zero_probability(self):
        x = np.arange(6.0)
        rng = np.random.default_rng(0)
        self.assertAllClose(x, layers.dropout_forward(x, 0.0, rng,
                                                      layers.TRAIN))
        self.assertAllClose(x, layers.dropout_forward(x, 0.0))

    def test_dropout_infer_identity(self):
        x = np.arange(6.0)
        self.assertAllClose(x, layers.dropout_forward(x, 0.75))

    def test_dropout_bad_probability(self):
        self.assertRaises(exceptions.ConfigError, layers.dropout_forward,
                          np.ones(2), 1.0)

    def test_dropout_train_needs_rng(self):
        self.assertRaises(exceptions.ContractViolation,
                          layers.dropout_forward, np.ones(2), 0.5,
                          None, layers.TRAIN)

    def test_dropout_scaling(self):
        out = layers.dropout_forward(np.ones(1000), 0.5,
                                     np.random.default_rng(2), layers.TRAIN)
        self.assertEqual({0.0, 2.0}, set(np.unique(out)))

    def test_dropout_gradient_fixed_mask(self):
        for seed in range(INSTANCES):
            rng = np.random.default_rng(seed)
            shape = tuple(int(n) for n in rng.integers(1, 6, size=2))
            p = float(rng.uniform(0.1, 0.6))
            x = utils.random_tensor(rng, *shape)
            proj = utils.positive_tensor(rng, *shape)
            state = layers.LayerState()
            layers.dropout_forward(x, p, np.random.default_rng(100 + seed),
                                   layers.TRAIN, state=state)

            def loss():
                out = layers.dropout_forward(
                    x, p, np.random.default_rng(100 + seed), layers.TRAIN)
                return np.sum(out * proj)

            self.assertGradientClose(layers.dropout_backward(proj, state),
                                     utils.numerical_gradient(loss, x))

    def test_softmax_uniform(self):
        self.assertAllClose([0.25] * 4, layers.softmax([0, 0, 0, 0]))

    def test_softmax_ratios(self):
        self.assertAllClose([1 / 6., 1 / 3., 1 / 2.],
                            layers.softmax([0, math.log(2), math.log(3)]),
                            atol=1e-12)

    def test_softmax_large_logits(self):
        probs = layers.softmax([1000.0, 0.0])
        self.assertTrue(np.all(np.isfinite(probs)))
        self.assertAllClose([1.0, 0.0], probs, atol=1e-300)

    def test_softmax_gradient(self):
        for seed in range(INSTANCES):
            rng = np.random.default_rng(seed)
            rows, classes = int(rng.integers(1, 4)), int(rng.integers(2, 7))
            z = utils.random_tensor(rng, rows, classes)
            # a one-hot cotangent per row, as cross-entropy produces
            proj = np.eye(classes)[rng.integers(0, classes, size=rows)]
            state = layers.LayerState()
            layers.softmax(z, state=state)
            self.assertGradientClose(
                layers.softmax_backward(proj, state),
                utils.numerical_gradient(
                    lambda: np.sum(layers.softmax(z) * proj), z))

    def test_softmax_sums_to_one(self):
        z = utils.random_tensor(np.random.default_rng(14), 6, 5) * 10.0
        self.assertAllClose(np.ones(6), layers.softmax(z).sum(axis=1),
                            atol=1e-12)

    def test_softmax_shift_invariant(self):
        z = utils.random_tensor(np.random.default_rng(15), 4, 5)
        for c in (-7.5, 3.25, 100.0):
            self.assertAllClose(layers.softmax(z), layers.softmax(z + c),
                                atol=1e-12)


class FlattenDenseTest(utils.TestCase):

    def test_row_major_layout(self):
        x = np.arange(8.0).reshape((2, 2, 2))
        flat = layers.flatten_forward(x)
        self.assertEqual(4.0, flat[4])
        self.assertEqual(0.0, flat[0])
        self.assertAllClose(x, layers.unflatten(flat, (2, 2, 2)))

    def test_printed_index_formula(self):
        self.assertEqual(5, layers.flatten_index(1, 1, 1, 2))

    def test_flatten_backward_restores_shape(self):
        state = layers.LayerState()
        layers.flatten_forward(np.zeros((3, 2, 2, 2)), state=state)
        grad = layers.flatten_backward(np.ones((3, 8)), state)
        self.assertEqual((3, 2, 2, 2), grad.shape)

    def test_dense_identity(self):
        x = np.array([1.0, -2.0, 3.0])
        self.assertAllClose(x, layers.dense_forward(x, np.eye(3),
                                                    np.zeros(3)))

    def test_dense_hand_example(self):
        self.assertAllClose([17], layers.dense_forward([4, 5], [[1, 2]],
                                                       [3]))

    def test_dense_mismatch(self):
        self.assertRaises(exceptions.ShapeError, layers.dense_forward,
                          np.ones(3), np.ones((2, 4)), np.zeros(2))

    def test_dense_gradient(self):
        for seed in range(INSTANCES):
            rng = np.random.default_rng(seed)
            n, m = (int(v) for v in rng.integers(1, 7, size=2))
            lead = (int(rng.integers(1, 5)),) if seed % 2 else ()
            x = utils.positive_tensor(rng, *(lead + (n,)))
            w = utils.positive_tensor(rng, m, n)
            b = utils.positive_tensor(rng, m)
            proj = utils.positive_tensor(rng, *(lead + (m,)))
            state = layers.LayerState()
            layers.dense_forward(x, w, b, state=state)

            def loss():
                return np.sum(layers.dense_forward(x, w, b) * proj)

            grad_x, grad_w, grad_b = layers.dense_backward(proj, state)
            self.assertGradientClose(grad_x,
                                     utils.numerical_gradient(loss, x))
            self.assertGradientClose(grad_w,
                                     utils.numerical_gradient(loss, w))
            self.assertGradientClose(grad_b,
                                     utils.numerical_gradient(loss, b))
