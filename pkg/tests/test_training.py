import os

import fixtures
import numpy as np

from cnfit import exceptions
from cnfit import layers
from cnfit import losses
from cnfit import network
from cnfit import optim
from cnfit import training
from tests import utils


def halves_dataset(n, seed):
    """Class 0 is bright on the left half, class 1 on the right half."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 2
    inputs = rng.normal(scale=0.1, size=(n, 1, 4, 4))
    inputs[labels == 0, :, :, :2] += 1.0
    inputs[labels == 1, :, :, 2:] += 1.0
    return inputs, labels


def linear_model():
    return layers.ModelSpec((1, 4, 4),
                            layers.parse_layer_list('flatten, dense(2), '
                                                    'softmax'), 2)


def conv_model():
    return layers.ModelSpec(
        (1, 4, 4), layers.parse_layer_list('conv(2,3,same), relu, pool(2), '
                                           'dropout(0.2), flatten, '
                                           'dense(2), softmax'), 2)


class EarlyStoppingTest(utils.TestCase):

    def _run(self, losses_, patience, min_delta=0.0):
        state = training.EarlyStopping(patience, min_delta)
        for epoch, loss in enumerate(losses_, 1):
            decision, best = training.early_stop_update(state, loss)
            if decision == training.STOP:
                return epoch, best
        return None, state.best_epoch

    def test_stops_after_patience(self):
        self.assertEqual((5, 2), self._run([1.0, 0.9, 0.95, 0.96, 0.97], 3))

    def test_equal_loss_is_not_improvement(self):
        self.assertEqual((2, 1), self._run([1.0, 1.0], 1))

    def test_min_delta(self):
        self.assertEqual((3, 1), self._run([1.0, 0.95, 0.92], 2,
                                           min_delta=0.1))

    def test_improvement_resets_wait(self):
        self.assertEqual((None, 4),
                         self._run([1.0, 1.1, 0.9, 0.8, 0.85], 2))

    def test_bad_patience(self):
        self.assertRaises(exceptions.ConfigError, training.EarlyStopping, 0)


class TrainConfigTest(utils.TestCase):

    def test_defaults(self):
        cfg = training.TrainConfig()
        self.assertEqual(optim.ADAM, cfg.optimizer)
        self.assertEqual(32, cfg.batch_size)
        self.assertEqual(5, cfg.early_stopping.patience)

    def test_digest_tracks_values(self):
        a = training.TrainConfig(learning_rate=0.01)
        b = training.TrainConfig(learning_rate=0.01)
        c = training.TrainConfig(learning_rate=0.02)
        self.assertEqual(a.digest(), b.digest())
        self.assertNotEqual(a.digest(), c.digest())

    def test_threads_do_not_change_digest(self):
        self.assertEqual(training.TrainConfig(threads=4).digest(),
                         training.TrainConfig().digest())

    def test_invalid_values(self):
        for kwargs in ({'epochs_max': 0}, {'batch_size': 0},
                       {'optimizer': 'rmsprop'}, {'learning_rate': -1},
                       {'dropout': 1.0}, {'threads': -1}):
            self.assertRaises(exceptions.ConfigError, training.TrainConfig,
                              **kwargs)


class HistoryTest(utils.TestCase):

    def test_epochs_must_be_sequential(self):
        history = training.TrainHistory()
        self.assertRaises(exceptions.ContractViolation, history.append,
                          training.EpochRecord(epoch=2, train_loss=1.0,
                                               train_acc=0.5, val_loss=1.0,
                                               val_acc=0.5, seconds=0.1))

    def test_csv_round_trip(self):
        path = os.path.join(self.useFixture(fixtures.TempDir()).path,
                            'history.csv')
        history = training.TrainHistory([
            training.EpochRecord(epoch=1, train_loss=0.5, train_acc=0.75,
                                 val_loss=0.625, val_acc=0.5, seconds=1.5),
            training.EpochRecord(epoch=2, train_loss=0.25, train_acc=1.0,
                                 val_loss=0.375, val_acc=1.0, seconds=1.25),
        ])
        training.write_history(history, path)
        with open(path) as f:
            self.assertEqual('epoch,train_loss,train_acc,val_loss,val_acc,'
                             'seconds', f.readline().strip())
        again = training.read_history(path)
        self.assertEqual(2, len(again))
        self.assertEqual([0.625, 0.375], again.column('val_loss'))
        self.assertEqual(2, again[1].epoch)

    def test_not_a_history_file(self):
        path = os.path.join(self.useFixture(fixtures.TempDir()).path,
                            'other.csv')
        with open(path, 'w') as f:
            f.write('a,b\n1,2\n')
        self.assertRaises(exceptions.DataError, training.read_history, path)


class TrainTest(utils.TestCase):

    def setUp(self):
        super(TrainTest, self).setUp()
        self.data = (halves_dataset(64, 0), halves_dataset(32, 1))

    def test_separable_data_is_learned(self):
        cfg = training.TrainConfig(epochs_max=30, batch_size=8,
                                   learning_rate=0.05, seed=3)
        params, history, best = training.train(linear_model(), self.data,
                                               cfg)
        _, acc, _ = training.evaluate_model(params, linear_model(),
                                            self.data[1])
        self.assertEqual(1.0, acc)
        self.assertEqual(best.epoch,
                         1 + int(np.argmin(history.column('val_loss'))))

    def test_returns_best_epoch_params(self):
        cfg = training.TrainConfig(epochs_max=8, batch_size=16,
                                   learning_rate=0.05, seed=1)
        model = linear_model()
        params, history, best = training.train(model, self.data, cfg)
        val_loss, _, _ = training.evaluate_model(params, model, self.data[1])
        self.assertAlmostEqual(min(history.column('val_loss')), val_loss,
                               places=12)

    def test_zero_learning_rate_keeps_init(self):
        model = linear_model()
        cfg = training.TrainConfig(epochs_max=2, learning_rate=0.0, seed=5,
                                   optimizer=optim.SGD)
        params, history, _ = training.train(model, self.data, cfg)
        init = network.init_params(model, np.random.default_rng(5))
        self.assertAllClose(init[1]['weight'], params[1]['weight'])
        self.assertEqual(history[0].val_loss, history[1].val_loss)

    def test_deterministic(self):
        cfg = training.TrainConfig(epochs_max=3, batch_size=8,
                                   learning_rate=0.01, seed=11)
        a, history_a, _ = training.train(conv_model(), self.data, cfg)
        b, history_b, _ = training.train(conv_model(), self.data, cfg)
        self.assertEqual(history_a.column('val_loss'),
                         history_b.column('val_loss'))
        for pa, pb in zip(a, b):
            for key in pa:
                self.assertTrue(np.array_equal(pa[key], pb[key]))

    def test_threaded_deterministic(self):
        cfg = training.TrainConfig(epochs_max=2, batch_size=16,
                                   learning_rate=0.01, seed=4, threads=3)
        _, history_a, _ = training.train(conv_model(), self.data, cfg)
        _, history_b, _ = training.train(conv_model(), self.data, cfg)
        self.assertEqual(history_a.column('train_loss'),
                         history_b.column('train_loss'))

    def test_threaded_matches_inline_without_dropout(self):
        model = linear_model()
        inline = training.TrainConfig(epochs_max=1, batch_size=16,
                                      learning_rate=0.01, seed=4)
        threaded = training.TrainConfig(epochs_max=1, batch_size=16,
                                        learning_rate=0.01, seed=4,
                                        threads=2)
        a, _, _ = training.train(model, self.data, inline)
        b, _, _ = training.train(model, self.data, threaded)
        self.assertAllClose(a[1]['weight'], b[1]['weight'], atol=1e-12)

    def test_thread_count_does_not_change_results(self):
        results = []
        for threads in (0, 1, 3):
            cfg = training.TrainConfig(epochs_max=2, batch_size=20,
                                       learning_rate=0.01, seed=4,
                                       threads=threads)
            results.append(training.train(conv_model(), self.data, cfg))
        for params, history, _ in results[1:]:
            self.assertAllClose(results[0][1].column('train_loss'),
                                history.column('train_loss'), atol=1e-12)
            for pa, pb in zip(results[0][0], params):
                for key in pa:
                    self.assertAllClose(pa[key], pb[key], atol=1e-12)

    def test_first_epoch_loss_near_uniform(self):
        model = layers.ModelSpec(
            (1, 8, 8), layers.parse_layer_list('conv(4,3,same), relu, '
                                               'pool(2), flatten, dense(4), '
                                               'softmax'), 4)
        rng = np.random.default_rng(9)
        inputs = rng.normal(scale=0.5, size=(80, 1, 8, 8))
        labels = np.arange(80) % 4
        data = ((inputs[:64], labels[:64]), (inputs[64:], labels[64:]))
        for seed in range(3):
            cfg = training.TrainConfig(epochs_max=1, batch_size=16,
                                       learning_rate=1e-3, seed=seed)
            _, history, _ = training.train(model, data, cfg)
            loss = history[0].train_loss
            self.assertGreaterEqual(loss, 0.8 * np.log(4))
            self.assertLessEqual(loss, 1.3 * np.log(4))

    def test_early_stopping_stops(self):
        # a zero learning rate never improves after the first epoch
        cfg = training.TrainConfig(
            epochs_max=50, learning_rate=0.0, seed=0,
            early_stopping=training.EarlyStoppingConfig(patience=2))
        _, history, best = training.train(linear_model(), self.data, cfg)
        self.assertEqual(3, len(history))
        self.assertEqual(1, best.epoch)

    def test_early_stopping_disabled(self):
        cfg = training.TrainConfig(
            epochs_max=4, learning_rate=0.0, seed=0,
            early_stopping=training.EarlyStoppingConfig(enabled=False,
                                                        patience=1))
        _, history, _ = training.train(linear_model(), self.data, cfg)
        self.assertEqual(4, len(history))

    def test_epoch_hook(self):
        seen = []
        cfg = training.TrainConfig(epochs_max=2, seed=0)
        training.train(linear_model(), self.data, cfg,
                       hooks={'epoch_end': seen.append})
        self.assertEqual([1, 2], [r.epoch for r in seen])

    def test_non_finite_loss(self):
        inputs, labels = self.data[0]
        bad = (np.full_like(inputs, np.inf), labels)
        cfg = training.TrainConfig(epochs_max=2, seed=0)
        e = self.assertRaises(exceptions.NonFiniteLoss, training.train,
                              linear_model(), (bad, self.data[1]), cfg)
        self.assertEqual(1, e.epoch)
        self.assertEqual(1, e.batch)

    def test_label_out_of_range(self):
        inputs, labels = self.data[0]
        cfg = training.TrainConfig(epochs_max=1)
        self.assertRaises(exceptions.DataError, training.train,
                          linear_model(), ((inputs, labels + 1),
                                           self.data[1]), cfg)

    def test_dropout_override(self):
        cfg = training.TrainConfig(epochs_max=1, dropout=0.0)
        trainer = training.Trainer(conv_model(), cfg)
        self.assertEqual(0.0, trainer.model.layers[3].p)

    def test_regularization_reaches_gradients(self):
        cfg = training.TrainConfig(reg=losses.RegConfig(lambda_l2=0.5))
        trainer = training.Trainer(linear_model(), cfg)
        params = [{}, {'weight': np.ones((2, 16)), 'bias': np.zeros(2)}, {}]
        grads = [{}, {'weight': np.zeros((2, 16)), 'bias': np.zeros(2)}, {}]
        reg = trainer._regularize(params, grads)
        self.assertEqual(0.5 * 32, reg)
        self.assertAllClose(np.ones((2, 16)), grads[1]['weight'])
