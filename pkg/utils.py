import argparse

from kolseries.bounds import SCHEDULES
from kolseries.checks import SUITES


def parse_none(x):
    return None if x == 'None' else x


class ExperimentParser(argparse.ArgumentParser):
    """Constructs an argument parser that returns arguments in groups

    One subcommand per task (run, verify, bounds, paths). Every subcommand shares
    the 'common' group; the rest are specific to the subcommand.
    """
    def __init__(self, description=''):
        super().__init__(description=description)
        self.subparsers = self.add_subparsers(dest='command', metavar='command',
                                              parser_class=argparse.ArgumentParser)
        self.subparsers.required = True
        self.commands = {}
        self.construct_parsers()

    def add_command(self, name, help=''):
        parser = self.subparsers.add_parser(name, help=help, description=help)
        self.add_common(parser)
        self.commands[name] = parser
        return parser

    @staticmethod
    def add_common(parser):
        c_parser = parser.add_argument_group('common')
        c_parser.add_argument(
            '--seed',
            default=None, type=int,
            help='Root seed. Overrides the config seed (default: config seed, else 0).')
        c_parser.add_argument(
            '--workers',
            default=1, type=int,
            help='Number of worker processes.')
        c_parser.add_argument(
            '--out',
            default=None, type=parse_none,
            help='Output directory (default: config outputs, else results).')
        c_parser.add_argument(
            '--override-hypotheses',
            default=False, action='store_true',
            help='Run with warnings instead of refusing when a hypothesis fails.')

    def construct_parsers(self):
        run = self.add_command('run', 'Estimate u(t, x) by the series, Girsanov and direct methods.')
        e_parser = run.add_argument_group('experiment')
        e_parser.add_argument(
            '--config',
            required=True, type=str,
            help='JSON experiment config.')

        verify = self.add_command('verify', 'Run the named verification suites.')
        v_parser = verify.add_argument_group('verification')
        v_parser.add_argument(
            '--suite',
            default='all', type=str,
            choices=list(SUITES) + ['all'],
            help='Suite to run. Choices: %(choices)s (default: %(default)s)')
        v_parser.add_argument(
            '--samples',
            default=200000, type=int,
            help='Monte Carlo samples (and paths) per statistical check.')

        bounds = self.add_command('bounds', 'Tabulate the v_n and Dv_n norm bounds.')
        b_parser = bounds.add_argument_group('bounds')
        b_parser.add_argument(
            '--config',
            default=None, type=parse_none,
            help='Take beta, delta, C_delta, Tr Q_inf, t and kappa from an experiment config.')
        b_parser.add_argument(
            '--beta',
            default=None, type=float,
            help='Drift growth exponent (default: 0.5, or the config drift).')
        b_parser.add_argument(
            '--delta',
            default=None, type=float,
            help='Blow-up rate of ||Lambda(t)|| (default: 0.5, or fitted).')
        b_parser.add_argument(
            '--kappa',
            default=None, type=float,
            help='Exponent of the q_n schedule (default: 1.5).')
        b_parser.add_argument(
            '--t',
            default=None, type=float,
            help='Time (default: 1).')
        b_parser.add_argument(
            '--p0',
            default=2., type=float,
            help='Exponent p_0.')
        b_parser.add_argument(
            '--bar-p',
            default=1.5, type=float,
            help='Lower limit of the exponents p_n.')
        b_parser.add_argument(
            '--nmax',
            default=10000, type=int,
            help='Highest order tabulated.')
        b_parser.add_argument(
            '--c-beta',
            default=1., type=float,
            help='Constant of the per-factor drift bound (default: %(default)s).')
        b_parser.add_argument(
            '--c-delta',
            default=None, type=float,
            help='Constant of ||Lambda(t)|| <= C t^-delta (default: 1, or fitted).')
        b_parser.add_argument(
            '--trace',
            default=None, type=float,
            help='Tr Q_inf (default: 1, or from the config model).')
        b_parser.add_argument(
            '--schedule',
            default='power', type=str,
            choices=list(SCHEDULES),
            help='q_n schedule. Choices: %(choices)s (default: %(default)s)')

        paths = self.add_command('paths', 'Dump simulated OU paths with L_t and M_t.')
        p_parser = paths.add_argument_group('paths')
        p_parser.add_argument(
            '--config',
            required=True, type=str,
            help='JSON experiment config.')
        p_parser.add_argument(
            '--npaths',
            default=4, type=int,
            help='Number of paths to dump.')
        p_parser.add_argument(
            '--steps',
            default=None, type=int,
            help='Time steps (default: the config mc.steps).')

    def parse_group_args(self, argv=None):
        args = self.parse_args(argv)
        arg_groups = {}

        for group in self.commands[args.command]._action_groups:
            group_dict = {a.dest: getattr(args, a.dest, None) for a in group._group_actions}
            arg_groups[group.title] = argparse.Namespace(**group_dict)

        return args.command, arg_groups

    @staticmethod
    def args_to_str(args):
        kwargs = vars(args)
        return '_'.join([f'{key}={val}' for key, val in kwargs.items()])
