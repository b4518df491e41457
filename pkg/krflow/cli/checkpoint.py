import base64
import json
from collections import namedtuple

import numpy as np

from krflow.base import ExperimentConfig
from krflow.calc import make_rng
from krflow.flow import build_model
from krflow.train import AdamState

FORMAT_VERSION = 1

Checkpoint = namedtuple('Checkpoint', ['config', 'model', 'epoch', 'optimizer', 'rng_states', 'config_hash', 'seed'])


def encode_array(values):
    """Base64 text of a float array as little-endian 64-bit floats"""
    return base64.b64encode(np.asarray(values, dtype='<f8').tobytes()).decode('ascii')


def decode_array(text):
    return np.frombuffer(base64.b64decode(text.encode('ascii')), dtype='<f8').astype(np.float64)


def save_checkpoint(path, config, model, epoch=0, optimizer=None, rng_states=None):
    """Write a checkpoint: a plain-text metadata header (lines starting with '#') followed by a JSON body holding the
    configuration, the parameter registry values, the optimizer moments and the random stream states

    Parameters
    ----------
    path : str
        Output file
    config : ExperimentConfig
        Experiment configuration of the model
    model : FlowModel
        Model
    epoch : int, optional
        Completed epochs
    optimizer : AdamState, optional
        Optimizer state
    rng_states : list, optional
        States of the trainer random streams
    """
    body = {'format_version': FORMAT_VERSION,
            'config': config.to_dict(),
            'config_hash': config.config_hash(),
            'seed': config.seed,
            'epoch': int(epoch),
            'initialized': bool(model.is_initialized()),
            'n_params': int(model.n_params),
            'params': encode_array(model.get_flat_params()),
            'optimizer': None,
            'rng_states': rng_states}
    if optimizer is not None:
        d = optimizer.to_dict()
        d['m'] = encode_array(d['m'])
        d['v'] = encode_array(d['v'])
        body['optimizer'] = d
    with open(path, 'w') as f:
        f.write('# krflow checkpoint\n')
        f.write('# format_version: %i\n' % FORMAT_VERSION)
        f.write('# variant: %s\n' % config.variant)
        f.write('# config_hash: %s\n' % body['config_hash'])
        f.write('# seed: %i\n' % config.seed)
        json.dump(body, f, indent=1, sort_keys=True)
        f.write('\n')


def load_checkpoint(path):
    """Read a checkpoint written by save_checkpoint(). The rebuilt model reproduces the saved one bit for bit

    Returns
    -------
    Checkpoint
        namedtuple of config, model, epoch, optimizer, rng_states, config_hash, seed
    """
    with open(path, 'r') as f:
        lines = [line for line in f if not line.startswith('#')]
    body = json.loads(''.join(lines))
    if 'format_version' not in body:
        raise ValueError('checkpoint: format_version is missing')
    if body['format_version'] != FORMAT_VERSION:
        raise ValueError('checkpoint: unsupported format_version %s' % body['format_version'])
    config = ExperimentConfig.from_dict(body['config'])
    model = build_model(config.model, make_rng(0))
    values = decode_array(body['params'])
    if values.size != model.n_params:
        raise ValueError('checkpoint: %i parameters stored but the configuration has %i' % (values.size,
                                                                                             model.n_params))
    model.set_flat_params(values)
    if body['initialized']:
        model.identity_initialize()
    optimizer = None
    if body['optimizer'] is not None:
        d = dict(body['optimizer'])
        d['m'] = decode_array(d['m'])
        d['v'] = decode_array(d['v'])
        optimizer = AdamState.from_dict(d)
    if body['config_hash'] != config.config_hash():
        raise ValueError('checkpoint: stored config_hash does not match the configuration')
    return Checkpoint(config, model, body['epoch'], optimizer, body['rng_states'], body['config_hash'], body['seed'])
