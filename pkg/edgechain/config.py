from dataclasses import dataclass, field
import json
import os
from pathlib import Path
from logging import getLogger

logger = getLogger(__name__)


def edgechain_home() -> Path:
    """ ~/.edgechain, or $EDGECHAIN_HOME if set. """
    home = os.environ.get('EDGECHAIN_HOME')
    return Path(home) if home else Path.home() / '.edgechain'


@dataclass
class Config:
    """
    The user-level config class. Use `Config.from_file` to init a new one.

    Vars:
        out_dir: default output directory of `run` when --out is omitted
        scenario_dirs: directories searched for `<name>.json` scenario files
    """

    out_dir: Path
    scenario_dirs: list[Path]
    _config_file: Path = field(repr=False)

    @classmethod
    def from_file(cls, path: Path):
        """ Init a new config object from json file. """
        try:
            with path.open() as fp:
                cfg = json.load(fp)
        except FileNotFoundError:
            logger.info("Config file not found, using defaults.")
            cfg = {}
        except json.JSONDecodeError:
            logger.error("Config file %s is not valid json, using defaults.", path)
            cfg = {}
        if not isinstance(cfg, dict):
            logger.error("Config file %s is not a json object, using defaults.", path)
            cfg = {}

        return cls(
            out_dir=Path(cfg.get('out_dir', 'edgechain-out')),
            scenario_dirs=[Path(os.path.expanduser(p)) for p in
                           cfg.get('scenario_dirs', [str(path.parent / 'scenarios')])],
            _config_file=path,
        )

    def save(self):
        """ Save to json file (at ~/.edgechain/config.json). """
        cfg = {
            'out_dir': str(self.out_dir),
            'scenario_dirs': [str(p) for p in self.scenario_dirs],
        }
        with self._config_file.open('w') as fp:
            json.dump(cfg, fp, indent=4)
