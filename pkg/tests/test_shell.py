import io
import os
import re

import fixtures
from testtools import matchers

from cnfit import exceptions
from cnfit import shell
from cnfit import tuning
from tests import fakes
from tests import utils


class ShellTest(utils.TestCase):

    def setUp(self):
        super(ShellTest, self).setUp()
        self.useFixture(fixtures.EnvironmentVariable('CNF_DEBUG'))
        self.useFixture(fixtures.EnvironmentVariable('CNF_THREADS'))
        self.tmp = self.useFixture(fixtures.TempDir()).path

    def shell(self, argstr, exit_code=0):
        stdout = io.StringIO()
        stderr = io.StringIO()
        self.useFixture(fixtures.MonkeyPatch('sys.stdout', stdout))
        self.useFixture(fixtures.MonkeyPatch('sys.stderr', stderr))
        e = self.assertRaises(SystemExit, shell.main, argstr.split())
        self.assertEqual(exit_code, e.code,
                         'stdout:\n%s\nstderr:\n%s' % (stdout.getvalue(),
                                                       stderr.getvalue()))
        return stdout.getvalue() + stderr.getvalue()

    def path(self, *parts):
        return os.path.join(self.tmp, *parts)

    def config(self, name, text):
        return fakes.write_config(self.tmp, name, text)

    def test_help(self):
        required = [
            '.*?^usage: cnfit',
            r'.*?^\s+train\s+Train a model',
            r'.*?^\s+synth-data\s+Draw the synthetic',
            '.*?^See "cnfit help COMMAND" for help on a specific '
            'command.',
        ]
        help_text = self.shell('help')
        for r in required:
            self.assertThat(help_text,
                            matchers.MatchesRegex(r, re.DOTALL | re.MULTILINE))

    def test_help_on_subcommand(self):
        help_text = self.shell('help tune')
        self.assertThat(help_text,
                        matchers.MatchesRegex('.*?^usage: cnfit tune',
                                              re.DOTALL | re.MULTILINE))
        self.assertIn('--resume', help_text)

    def test_help_unknown_command(self):
        self.assertRaises(exceptions.CommandError,
                          shell.CnfitShell().main, ['help', 'foofoo'])
        self.assertIn("'foofoo' is not a valid subcommand",
                      self.shell('help foofoo', exit_code=1))

    def test_no_arguments_prints_help(self):
        self.assertIn('<subcommand>', self.shell(''))

    def test_global_flags_only(self):
        self.useFixture(fixtures.FakeLogger(name='cnfit'))
        self.assertIn('<subcommand>', self.shell('--debug', exit_code=1))

    def test_unknown_flag(self):
        output = self.shell('synth-data --out x --colour', exit_code=1)
        self.assertIn('unrecognized arguments', output)

    def test_missing_required_flag(self):
        self.shell('train', exit_code=1)

    def test_synth_data(self):
        out = self.path('synth')
        output = self.shell('synth-data --out %s --n 50 --side 32 --seed 7'
                            % out)
        files = [name for _, _, names in os.walk(out) for name in names
                 if name.endswith('.pgm')]
        self.assertEqual(200, len(files))
        self.assertTrue(os.path.exists(os.path.join(out, 'manifest.csv')))
        self.assertIn('stripes', output)

    def test_synth_data_side_too_small(self):
        output = self.shell('synth-data --out %s --side 8'
                            % self.path('synth'), exit_code=2)
        self.assertIn('ERROR: side must be >= 16', output)

    def test_inspect_config(self):
        path = self.config('inspect.cfg', fakes.INSPECT_CONFIG)
        output = self.shell('inspect --config %s' % path)
        self.assertIn('(32, 128, 128)', output)
        self.assertIn('(64, 14, 14)', output)
        self.assertIn('(12544)', output)
        self.assertIn('Total parameters: 868132', output)

    def test_inspect_needs_one_source(self):
        self.shell('inspect', exit_code=1)

    def test_missing_config_file(self):
        output = self.shell('train --config %s' % self.path('nowhere.cfg'),
                            exit_code=2)
        self.assertIn('ERROR', output)

    def test_invalid_config(self):
        path = self.config('bad.cfg', '[train]\nmomentum = 0.9\n')
        output = self.shell('train --config %s' % path, exit_code=2)
        self.assertIn('line 2', output)

    def test_pipeline(self):
        self.shell('synth-data --out %s --n 6 --side 16 --seed 2'
                   % self.path('synth'))

        prepare_cfg = self.config('prepare.cfg', fakes.PREPARE_CONFIG)
        output = self.shell('prepare --config %s --out %s'
                            % (prepare_cfg, self.path('prepared')))
        self.assertIn('disk', output)
        for name in ('train.csv', 'val.csv', 'stats.json'):
            self.assertTrue(os.path.exists(self.path('prepared', name)))

        train_cfg = self.config('train.cfg', fakes.TRAIN_CONFIG)
        output = self.shell('train --config %s' % train_cfg)
        self.assertIn('best epoch', output)
        ckpt = self.path('run', 'model.ckpt')
        self.assertTrue(os.path.exists(ckpt))
        with open(self.path('run', 'history.csv')) as f:
            self.assertEqual(3, len(f.read().splitlines()))

        output = self.shell('inspect --checkpoint %s' % ckpt)
        self.assertIn('Total parameters: 536', output)
        self.assertIn('disk, square, cross, stripes', output)

        cm_path = self.path('confusion.csv')
        output = self.shell('eval --checkpoint %s --manifest %s --out %s'
                            % (ckpt, self.path('prepared', 'val.csv'),
                               cm_path))
        self.assertIn('weighted avg', output)
        self.assertIn('skew check', output)
        with open(cm_path) as f:
            self.assertEqual(5, len(f.read().splitlines()))

        output = self.shell('tune --config %s' % train_cfg)
        self.assertIn('best loss', output)
        space = tuning.SearchSpace.parse('learning_rate = log(1e-3,1e-1)')
        records = tuning.read_trial_log(self.path('run', 'trials.csv'),
                                        space)
        self.assertEqual([1, 2, 3], [r.trial for r in records])
        with open(self.path('run', 'best.cfg')) as f:
            self.assertIn('learning_rate = ', f.read())

    def test_eval_corrupt_checkpoint(self):
        path = self.path('model.ckpt')
        with open(path, 'wb') as f:
            f.write(b'CNF1' + b'\0' * 20)
        output = self.shell('eval --checkpoint %s --manifest %s'
                            % (path, self.path('val.csv')), exit_code=2)
        self.assertIn('ERROR', output)
