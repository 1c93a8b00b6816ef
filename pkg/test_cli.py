"""
End-to-end tests of the scma-lab command line
"""
import json
import os
import sys

import numpy as np
import pytest

from commands import default_detector
from config import DATA_DIR, DEFAULT_CODEBOOK, DEFAULT_FACTOR_GRAPH, load_run_config
from main import build_parser, cli_dispatch
from utils.errors import ConfigError
from utils.ae_codec import StackArch, build_autoencoder, save_autoencoder
from utils.monitoring import performance_monitor
from utils.scma_model import derive_masks, load_codebook


def _lines(path):
    return path.read_text(encoding='utf-8').splitlines()


# ==================== RUN CONFIG ====================

def test_shipped_run_config_resolves_paths():
    run = load_run_config(os.path.join(DATA_DIR, 'configs', 'canonical.json'))
    assert run.system == {'J': 6, 'K': 4, 'M': 4, 'N': 2, 'mode': 'scma'}
    assert os.path.samefile(run.codebook, DEFAULT_CODEBOOK)
    assert os.path.samefile(run.factor_graph, DEFAULT_FACTOR_GRAPH)
    assert default_detector(run, None) == 'logmpa:5'
    assert default_detector(run, 'map') == 'map'


def test_run_config_rejects_unknown_keys(tmp_path):
    path = tmp_path / 'run.json'
    path.write_text(json.dumps({'system': {}, 'detectors': []}))
    with pytest.raises(ConfigError):
        load_run_config(str(path))
    assert load_run_config(None).codebook is None


# ==================== COMMANDS ====================


def test_no_arguments_is_a_usage_error():
    assert cli_dispatch([]) == 2


def test_unknown_flag_is_a_usage_error():
    assert cli_dispatch(['complexity', '--no-such-flag']) == 2


def test_every_command_is_registered():
    parser = build_parser()
    commands = parser._subparsers._group_actions[0].choices
    assert {'sweep', 'train-decoder', 'train-autoencoder', 'export-codebook',
            'constellation', 'complexity', 'bench'} <= set(commands)


def test_complexity_table(tmp_path):
    assert cli_dispatch(['complexity', '--seed', '1', '--out', str(tmp_path)]) == 0
    lines = _lines(tmp_path / 'complexity.csv')
    assert lines[0] == 'detector,mul,add,log_exp,normalized,dl_reduction_pct'
    assert lines[1:] == [
        'logmpa:3,9456,13320,2449,156860,5.6',
        'logmpa:5,9456,16920,4081,193100,23.3',
        'logmpa:7,9456,20520,5713,229340,35.4',
        'dl,14784,252,0,148092,',
    ]


def test_complexity_bad_weights_fail(tmp_path):
    assert cli_dispatch(['complexity', '--seed', '1', '--out', str(tmp_path), '--weights', '1,2']) == 1


def test_missing_codebook_fails(tmp_path):
    args = ['sweep', '--seed', '1', '--out', str(tmp_path), '--codebook', str(tmp_path / 'absent.json')]
    assert cli_dispatch(args) == 1


def test_sweep_output_is_reproducible(tmp_path):
    outputs = []
    for name in ('a', 'b'):
        out = tmp_path / name
        args = ['sweep', '--seed', '7', '--out', str(out), '--detector', 'logmpa:3', '--ebn0', '2,6',
                '--min-errors', '20', '--min-frames', '100', '--max-frames', '400', '--batch', '100']
        assert cli_dispatch(args) == 0
        outputs.append(((out / 'sweep_logmpa_3.csv').read_bytes(), (out / 'sweep_logmpa_3.json').read_bytes()))
    assert outputs[0] == outputs[1]
    lines = outputs[0][0].decode().splitlines()
    assert lines[0] == 'ebn0_db,frames,bit_err,sym_err,ber,ser,ci95,ns_per_frame'
    assert len(lines) == 3


def test_noiseless_map_sweep(tmp_path):
    args = ['sweep', '--seed', '3', '--out', str(tmp_path), '--detector', 'map', '--ebn0', '10',
            '--noiseless', '--min-frames', '100', '--max-frames', '200', '--batch', '100', '--name', 'clean']
    assert cli_dispatch(args) == 0
    row = _lines(tmp_path / 'clean.csv')[1].split(',')
    assert row[:4] == ['10', '200', '0', '0']
    assert performance_monitor.get_stats('sweep map')['count'] >= 1


def test_constellation_csv(tmp_path):
    args = ['constellation', '--seed', '1', '--out', str(tmp_path), '--resource', '0']
    assert cli_dispatch(args) == 0
    lines = _lines(tmp_path / 'constellation_r0.csv')
    assert lines[0] == 'kind,label,re,im'
    assert len(lines) == 1 + 64


def test_export_codebook_from_checkpoint(tmp_path, small_codebook):
    ae = build_autoencoder(small_codebook.config, derive_masks(small_codebook.graph()),
                           StackArch(1, 4), StackArch(1, 6), rng=np.random.default_rng(0))
    checkpoint = tmp_path / 'ae.ckpt'
    save_autoencoder(ae, str(checkpoint))
    target = tmp_path / 'learned.json'
    assert cli_dispatch(['export-codebook', '--checkpoint', str(checkpoint), '--file', str(target)]) == 0
    learned = load_codebook(str(target))
    assert learned.supports == small_codebook.supports


if __name__ == "__main__":
    sys.exit(pytest.main([__file__]))
