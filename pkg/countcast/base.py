import os
from pathlib import Path

import yaml

from countcast.errors import ConfigError

CONFIG_DIR = os.path.join(str(Path.home()), '.config/countcast')
CONFIG_FILE = os.path.join(CONFIG_DIR, 'config.yml')


class Base:
    def __init__(self, cfg=None):
        """
        :param cfg: path to a yaml run config, or a dict; defaults to ~/.config/countcast/config.yml
        """
        if cfg is None:
            cfg = CONFIG_FILE

        if isinstance(cfg, (str, os.PathLike)):
            self._cfg_file = os.fspath(cfg)
            with open(self._cfg_file, 'r') as f:
                try:
                    self._cfg = yaml.safe_load(f) or {}
                except yaml.YAMLError as e:
                    raise ConfigError('unable to parse %s: %s' % (self._cfg_file, e))
            self._base_dir = os.path.dirname(os.path.abspath(self._cfg_file))
        elif isinstance(cfg, dict):
            self._cfg_file = None
            self._cfg = cfg
            self._base_dir = os.getcwd()
        else:
            raise TypeError("cfg must be a path to a yaml file or a dict")

        if not isinstance(self._cfg, dict):
            raise ConfigError('run config must be a mapping, got %s' % type(self._cfg).__name__)

    def get_cfg(self):
        return self._cfg

    @property
    def base_dir(self):
        return self._base_dir

    def resolve(self, path):
        """paths in the config are relative to the config file's directory"""
        if path is None:
            return None
        path = os.path.expanduser(os.fspath(path))
        return path if os.path.isabs(path) else os.path.join(self._base_dir, path)
