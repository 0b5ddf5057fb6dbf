"""
This module contains helper functions for json configuration files and resolved-config snapshots.

A configuration file is a json object with the optional sections stft, train, simulate and prep. Every section maps
onto the fields of one dataclass. Values given on the command line overwrite the values of the file.
"""
import json
import logging
import os
from dataclasses import dataclass, field, fields, is_dataclass, asdict
from typing import Optional, Type, TypeVar

from pse import ConfigException, PseException

logger = logging.getLogger(__name__)

SECTIONS = ('stft', 'train', 'simulate', 'prep')
SNAPSHOT_NAME = 'resolved_config.json'

T = TypeVar('T')


def load_config(path: Optional[str]) -> dict:
    """
    Loads a configuration file

    :param path: path to the json file, None returns an empty configuration
    :raises ConfigException: if the file is missing, not a json object or has an unknown section
    :return: dict section name -> dict of values
    """
    if path is None:
        return {}
    if not os.path.isfile(path):
        raise ConfigException("Could not find config file {}".format(path))
    try:
        with open(path, 'r', encoding='utf-8') as f:
            obj = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigException("Config file {} is not valid json: {}".format(path, e))
    if not isinstance(obj, dict):
        raise ConfigException("Config file {} must contain a json object".format(path))
    unknown = [key for key in obj if key not in SECTIONS]
    if len(unknown) > 0:
        raise ConfigException("Unknown config section(s) {} in {} (expected {})".format(
            ', '.join(unknown), path, ', '.join(SECTIONS)))
    for key, section in obj.items():
        if not isinstance(section, dict):
            raise ConfigException("Config section {} must be a json object".format(key))
    return obj


def merge_section(cls: Type[T], file_section: Optional[dict], overrides: Optional[dict] = None) -> T:
    """
    Builds a config dataclass from a file section and command line overrides (overrides win, None means not given)

    :param cls: dataclass type
    :param file_section: values from the config file
    :param overrides: values from the command line
    :raises ConfigException: on unknown keys or values rejected by the dataclass
    """
    known = {f.name for f in fields(cls)}
    values = dict(file_section or {})
    unknown = [key for key in values if key not in known]
    if len(unknown) > 0:
        raise ConfigException("Unknown key(s) {} for {}".format(', '.join(unknown), cls.__name__))
    for key, value in (overrides or {}).items():
        if value is None: continue
        if key not in known:
            raise ConfigException("Unknown key {} for {}".format(key, cls.__name__))
        values[key] = value
    try:
        return cls(**values)
    except (TypeError, ValueError, PseException) as e:
        raise ConfigException("Invalid {} configuration: {}".format(cls.__name__, e))


def to_jsonable(obj):
    """ converts (nested) dataclasses and tuples to plain json types """
    if is_dataclass(obj):
        return to_jsonable(asdict(obj))
    if isinstance(obj, dict):
        return {str(key): to_jsonable(value) for key, value in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(value) for value in obj]
    return obj


@dataclass
class RunConfig:
    """
    Fully resolved settings of one cli run.

    :param command: name of the sub command
    :param seed: resolved master seed
    :param out_dir: output directory of the run
    :param sections: resolved config dataclasses by section name
    :param arguments: remaining command line arguments (paths, flags)
    """
    command: str
    seed: int
    out_dir: str
    sections: dict = field(default_factory=dict)
    arguments: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            'command': self.command,
            'seed': self.seed,
            'out_dir': self.out_dir,
            'sections': to_jsonable(self.sections),
            'arguments': to_jsonable(self.arguments),
        }

    def write_snapshot(self) -> str:
        """
        Writes resolved_config.json into the output directory

        :return: path of the snapshot
        """
        if not os.path.isdir(self.out_dir):
            os.makedirs(self.out_dir)
        path = os.path.join(self.out_dir, SNAPSHOT_NAME)
        with open(path, 'w', encoding='utf-8', newline='\n') as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write('\n')
        logger.debug("Wrote resolved config to {}".format(path))
        return path
