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
The training loop: epochs of shuffled mini-batches, regularized
backpropagation, early stopping and best-epoch restoration.
"""

import copy
import csv
import hashlib
import logging
import time

from concurrent import futures
import numpy as np

from cnfit import base
from cnfit import checkpoint
from cnfit import exceptions
from cnfit import layers
from cnfit import losses
from cnfit import network
from cnfit import optim
from cnfit import utils

HISTORY_FIELDS = ('epoch', 'train_loss', 'train_acc', 'val_loss', 'val_acc',
                  'seconds')

CONTINUE = 'continue'
STOP = 'stop'

# batch rows per gradient chunk, independent of the thread count
GRADIENT_CHUNK = 8

logger = logging.getLogger(__name__)


class EarlyStoppingConfig(object):

    def __init__(self, enabled=True, patience=5, min_delta=0.0):
        if patience < 1:
            raise exceptions.ConfigError("patience must be >= 1",
                                         field='patience')
        if min_delta < 0:
            raise exceptions.ConfigError("min_delta must be >= 0",
                                         field='min_delta')
        self.enabled = bool(enabled)
        self.patience = int(patience)
        self.min_delta = float(min_delta)


class TrainConfig(object):
    """Training hyperparameters, seeds and budgets.

    ``dropout``, when set, replaces the rate of every dropout layer.
    """

    def __init__(self, epochs_max=60, batch_size=32, optimizer=optim.ADAM,
                 learning_rate=0.001, beta1=0.9, beta2=0.999, epsilon=1e-8,
                 reg=None, dropout=None, early_stopping=None, seed=0,
                 shuffle=True, threads=0):
        if epochs_max < 1:
            raise exceptions.ConfigError("epochs_max must be >= 1",
                                         field='epochs_max')
        if batch_size < 1:
            raise exceptions.ConfigError("batch_size must be >= 1",
                                         field='batch_size')
        if optimizer not in optim.OPTIMIZERS:
            raise exceptions.ConfigError(
                "optimizer must be one of %s"
                % utils.pretty_choice_list(optim.OPTIMIZERS),
                field='optimizer')
        if learning_rate < 0:
            raise exceptions.ConfigError("learning_rate must be >= 0",
                                         field='learning_rate')
        if dropout is not None:
            layers.check_drop_probability(dropout)
        if threads < 0:
            raise exceptions.ConfigError("threads must be >= 0",
                                         field='threads')
        self.epochs_max = int(epochs_max)
        self.batch_size = int(batch_size)
        self.optimizer = optimizer
        self.learning_rate = float(learning_rate)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.epsilon = float(epsilon)
        self.reg = reg or losses.RegConfig()
        self.dropout = None if dropout is None else float(dropout)
        self.early_stopping = early_stopping or EarlyStoppingConfig()
        self.seed = int(seed) & 0xffffffffffffffff
        self.shuffle = bool(shuffle)
        self.threads = int(threads)

    def create_optimizer(self, params):
        if self.optimizer == optim.SGD:
            return optim.SgdState(self.learning_rate)
        return optim.AdamState.create(params, self.learning_rate, self.beta1,
                                      self.beta2, self.epsilon)

    def to_text(self):
        es = self.early_stopping
        items = [
            ('epochs_max', self.epochs_max),
            ('batch_size', self.batch_size),
            ('optimizer', self.optimizer),
            ('learning_rate', repr(self.learning_rate)),
            ('beta1', repr(self.beta1)),
            ('beta2', repr(self.beta2)),
            ('epsilon', repr(self.epsilon)),
            ('lambda_l1', repr(self.reg.lambda_l1)),
            ('lambda_l2', repr(self.reg.lambda_l2)),
            ('epsilon_l1', repr(self.reg.epsilon_l1)),
            ('dropout', '' if self.dropout is None else repr(self.dropout)),
            ('early_stopping', 'true' if es.enabled else 'false'),
            ('patience', es.patience),
            ('min_delta', repr(es.min_delta)),
            ('seed', self.seed),
            ('shuffle', 'true' if self.shuffle else 'false'),
        ]
        return ''.join('%s = %s\n' % item for item in items)

    def digest(self):
        return hashlib.sha256(self.to_text().encode('utf-8')).hexdigest()


class EpochRecord(base.Record):
    FIELDS = HISTORY_FIELDS


class TrainHistory(object):
    """Per-epoch learning-curve records."""

    def __init__(self, records=None):
        self.records = []
        for record in records or []:
            self.append(record)

    def append(self, record):
        expected = len(self.records) + 1
        if record.epoch != expected:
            raise exceptions.ContractViolation(
                "epoch %d recorded, expected %d" % (record.epoch, expected))
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, index):
        return self.records[index]

    def column(self, name):
        return [getattr(r, name) for r in self.records]


def write_history(history, path):
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(HISTORY_FIELDS)
        for r in history:
            writer.writerow([r.epoch] + [utils.format_float(getattr(r, k))
                                         for k in HISTORY_FIELDS[1:]])


def read_history(path):
    with open(path, newline='', encoding='utf-8') as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != HISTORY_FIELDS:
            raise exceptions.DataError(
                "%s is not a history file (header %s)"
                % (path, reader.fieldnames))
        records = []
        for row in reader:
            info = dict((k, float(row[k])) for k in HISTORY_FIELDS[1:])
            info['epoch'] = int(row['epoch'])
            records.append(EpochRecord(info))
    return TrainHistory(records)


class EarlyStopping(object):
    """Tracks the best validation loss; an epoch improves only when its loss
    is below ``best - min_delta``."""

    def __init__(self, patience=5, min_delta=0.0):
        if patience < 1:
            raise exceptions.ConfigError("patience must be >= 1")
        self.patience = patience
        self.min_delta = min_delta
        self.best_loss = float('inf')
        self.best_epoch = 0
        self.epoch = 0
        self.wait = 0

    def update(self, val_loss):
        self.epoch += 1
        if val_loss < self.best_loss - self.min_delta:
            self.best_loss = val_loss
            self.best_epoch = self.epoch
            self.wait = 0
        else:
            self.wait += 1
        return STOP if self.wait >= self.patience else CONTINUE


def early_stop_update(state, val_loss):
    """Feed one epoch's validation loss; returns (decision, best epoch)."""
    decision = state.update(val_loss)
    return decision, state.best_epoch


def evaluate_model(params, model, dataset, batch_size=256):
    """Infer-phase loss, accuracy and predicted labels over ``dataset``.

    Ties in the predicted probabilities go to the lowest class index.
    """
    inputs, labels = dataset
    n = len(labels)
    if n == 0:
        raise exceptions.DataError("cannot evaluate an empty dataset")
    predictions = np.empty(n, dtype=np.int64)
    nll = 0.0
    for start in range(0, n, batch_size):
        probs = network.predict_proba(model, params,
                                      inputs[start:start + batch_size])
        chunk = labels[start:start + batch_size]
        nll += losses.categorical_cross_entropy(probs, chunk) * len(chunk)
        predictions[start:start + batch_size] = np.argmax(probs, axis=1)
    accuracy = float(np.mean(predictions == labels))
    return nll / n, accuracy, predictions


class Trainer(utils.HookableMixin):
    """Runs ``train`` for one model and config.

    Hooks: ``epoch_end(record)`` after each epoch's validation pass.
    """

    def __init__(self, model, cfg):
        if cfg.dropout is not None:
            model = layers.ModelSpec.from_text(model.to_text())
            for layer in model.layers:
                if layer.kind == layers.DROPOUT:
                    layer.p = cfg.dropout
        self.model = model
        self.cfg = cfg
        self.stop = network.logits_stop(model)
        self.penalized = network.penalized_weights(model)

    def _chunk_gradients(self, params, inputs, labels, total, rng):
        logits, states = network.forward(self.model, params, inputs,
                                         phase=layers.TRAIN, rng=rng,
                                         stop=self.stop)
        flat = logits.reshape(len(labels), -1)
        loss, grad = losses.softmax_cross_entropy(flat, labels)
        scale = len(labels) / float(total)
        grads, _ = network.backward(self.model, states,
                                    (grad * scale).reshape(logits.shape))
        correct = int(np.sum(np.argmax(flat, axis=1) == labels))
        return loss * scale, grads, correct

    def _batch_gradients(self, params, batch, rng, pool):
        starts = range(0, len(batch), GRADIENT_CHUNK)
        seeds = rng.integers(0, 2 ** 63, size=len(starts))
        args = [(params, batch.inputs[s:s + GRADIENT_CHUNK],
                 batch.labels[s:s + GRADIENT_CHUNK], len(batch),
                 np.random.default_rng(seed))
                for s, seed in zip(starts, seeds)]
        if pool is None:
            results = [self._chunk_gradients(*a) for a in args]
        else:
            results = [job.result() for job in
                       [pool.submit(self._chunk_gradients, *a) for a in args]]
        # reduce in chunk order so results do not depend on scheduling
        loss, grads, correct = results[0]
        for l, g, c in results[1:]:
            loss += l
            correct += c
            grads = optim._tree_map(np.add, grads, g)
        return loss, grads, correct

    def _regularize(self, params, grads):
        reg_cfg = self.cfg.reg
        weights = [params[i][k] for i, k in self.penalized]
        value = losses.regularized_loss(0.0, weights, reg_cfg)
        if reg_cfg.active:
            for i, k in self.penalized:
                grads[i][k] = grads[i][k] + losses.penalty_gradient(
                    params[i][k], reg_cfg)
        return value.reg_loss

    def train(self, train_set, val_set, params=None):
        cfg = self.cfg
        model = self.model
        train_x, train_y = train_set
        if len(train_y) == 0 or len(val_set[1]) == 0:
            raise exceptions.DataError(
                "training and validation sets must not be empty")
        for name, y in (('training', train_y), ('validation', val_set[1])):
            if np.any(y < 0) or np.any(y >= model.class_count):
                raise exceptions.DataError(
                    "%s labels must be in [0, %d)"
                    % (name, model.class_count))

        rng = np.random.default_rng(cfg.seed)
        if params is None:
            params = network.init_params(model, rng)
        else:
            network.check_params(model, params)
            params = network.copy_params(params)
        opt_state = cfg.create_optimizer(params)
        stopper = EarlyStopping(cfg.early_stopping.patience,
                                cfg.early_stopping.min_delta)
        history = TrainHistory()
        digest = cfg.digest()
        best = None

        pool = None
        if cfg.threads > 0:
            pool = futures.ThreadPoolExecutor(max_workers=cfg.threads)
        try:
            for epoch in range(1, cfg.epochs_max + 1):
                started = time.time()
                loss_sum = 0.0
                correct = 0
                for number, batch in enumerate(optim.batch_iterator(
                        train_set, cfg.batch_size, rng, cfg.shuffle)):
                    data_loss, grads, hits = self._batch_gradients(
                        params, batch, rng, pool)
                    reg_loss = self._regularize(params, grads)
                    if not np.isfinite(data_loss + reg_loss):
                        raise exceptions.NonFiniteLoss(
                            "loss became non-finite at epoch %d, batch %d"
                            % (epoch, number + 1), epoch=epoch,
                            batch=number + 1)
                    params, opt_state = opt_state.apply(params, grads)
                    loss_sum += data_loss * len(batch)
                    correct += hits
                    logger.debug("epoch %d batch %d loss %.6f reg %.6g",
                                 epoch, number + 1, data_loss, reg_loss)

                val_loss, val_acc, _ = evaluate_model(params, model, val_set)
                record = EpochRecord(
                    epoch=epoch,
                    train_loss=loss_sum / len(train_y),
                    train_acc=correct / float(len(train_y)),
                    val_loss=val_loss, val_acc=val_acc,
                    seconds=time.time() - started)
                history.append(record)
                logger.info("epoch %d: loss %.4f acc %.4f val_loss %.4f "
                            "val_acc %.4f (%.1fs)", epoch, record.train_loss,
                            record.train_acc, val_loss, val_acc,
                            record.seconds)
                self.run_hooks('epoch_end', record)

                decision, best_epoch = early_stop_update(stopper, val_loss)
                if best_epoch == epoch:
                    best = checkpoint.Checkpoint(
                        model, network.copy_params(params),
                        copy.deepcopy(opt_state), epoch,
                        copy.deepcopy(rng.bit_generator.state), digest)
                if decision == STOP and cfg.early_stopping.enabled:
                    logger.info("early stopping after epoch %d; best epoch "
                                "%d (val_loss %.4f)", epoch, best_epoch,
                                stopper.best_loss)
                    break
        finally:
            if pool is not None:
                pool.shutdown()

        if best is None:
            # every validation loss was non-finite
            raise exceptions.NonFiniteLoss(
                "validation loss never became finite")
        return best.params, history, best


def train(model, data, cfg, hooks=None):
    """Train ``model`` on ``data = (train_set, val_set)``.

    Returns the parameters of the best-validation-loss epoch, the
    TrainHistory and the best Checkpoint.
    """
    trainer = Trainer(model, cfg)
    for hook_type, func in (hooks or {}).items():
        trainer.add_hook(hook_type, func)
    train_set, val_set = data
    return trainer.train(train_set, val_set)
