import os

import click
import yaml

from countcast.base import CONFIG_FILE
from countcast.pipeline import default_config


def initialize(path=None, overwrite=False):
    """initialize a run config file

    1. default location is ~/.config/countcast/config.yml
    2. an existing file is kept unless `overwrite`; its keys are reported
    3. otherwise every key is written with its default value; paths are relative to the file
    :return: str path of the config file
    """

    cfg_file = os.path.abspath(os.path.expanduser(path or CONFIG_FILE))
    cfg_dir = os.path.dirname(cfg_file)

    if not os.path.exists(cfg_dir):
        os.makedirs(cfg_dir)
        click.echo('created path %s\n' % cfg_dir)

    if os.path.exists(cfg_file) and not overwrite:
        try:
            with open(cfg_file, 'r') as f:
                existing = yaml.safe_load(f) or {}
            click.echo('%s already exists (keys: %s); use --overwrite to replace it'
                       % (cfg_file, ', '.join(sorted(existing))))
        except yaml.YAMLError:
            click.echo('unable to load %s; use --overwrite to replace it' % cfg_file)
        return cfg_file

    config = default_config()
    text = yaml.safe_dump(config, sort_keys=False)
    click.echo('\n' + text)

    with open(cfg_file, 'w') as f:
        f.write(text)
    return cfg_file
