# tests/pollution_game/test_config.py

import os
import shutil
import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch

from pollution_game.config import DEFAULT_TOL, Settings, load_settings


class TestLoadSettings(unittest.TestCase):

    def setUp(self):
        self.folder = Path(tempfile.mkdtemp())
        self.missing_env = str(self.folder / "missing.env")

    def tearDown(self):
        shutil.rmtree(self.folder)

    @patch.dict(os.environ, {}, clear=True)
    def test_defaults(self):
        """Test the settings without any environment variable."""
        settings = load_settings(self.missing_env)
        self.assertEqual(settings, Settings())
        self.assertEqual(settings.tol, DEFAULT_TOL)

    @patch.dict(os.environ, {"POLLUTION_GAME_TOL": "1e-8", "POLLUTION_GAME_WORKERS": "4",
                             "POLLUTION_GAME_FORMAT": "VTK", "POLLUTION_GAME_LOG_LEVEL": "debug",
                             "POLLUTION_GAME_OUT": "results"}, clear=True)
    def test_environment(self):
        """Test that every variable is read and normalised."""
        settings = load_settings(self.missing_env)
        self.assertEqual(settings, Settings(log_level="DEBUG", tol=1e-8, field_format="vtk", workers=4,
                                            out_dir="results"))

    @patch.dict(os.environ, {"POLLUTION_GAME_WORKERS": "2"}, clear=True)
    def test_dotenv_file(self):
        """Test that a .env file fills unset variables without overriding the environment."""
        dotenv = self.folder / ".env"
        dotenv.write_text("POLLUTION_GAME_WORKERS=8\nPOLLUTION_GAME_TOL=1e-9\n", encoding="utf-8")
        settings = load_settings(str(dotenv))
        self.assertEqual(settings.workers, 2)
        self.assertEqual(settings.tol, 1e-9)

    def test_invalid_values(self):
        """Test the rejected settings."""
        for env in ({"POLLUTION_GAME_TOL": "abc"}, {"POLLUTION_GAME_TOL": "-1"},
                    {"POLLUTION_GAME_WORKERS": "0"}, {"POLLUTION_GAME_FORMAT": "hdf5"}):
            with self.subTest(env=env):
                with patch.dict(os.environ, env, clear=True):
                    with self.assertRaises(ValueError):
                        load_settings(self.missing_env)


if __name__ == '__main__':
    unittest.main(argv=['first-arg-is-ignored'], exit=False)
