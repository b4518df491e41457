from .checkpoint import Checkpoint, save_checkpoint, load_checkpoint, encode_array, decode_array
from .cases import CASES, Case, get_case
from .commands import cmd_fit, cmd_approx, cmd_eval, cmd_gradcheck, cmd_paramcount, cmd_repro, run_one
from .main import build_arg_parser, main
