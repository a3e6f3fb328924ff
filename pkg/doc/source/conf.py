# Sphinx configuration of the flapguard documentation.
import os
import sys
sys.path.insert(0, os.path.abspath('../..'))

from flapguard._version import __version__  # noqa: E402

project = 'flapguard'
copyright = '2026, flapguard developers'
author = 'flapguard developers'
release = __version__

extensions = [
    'sphinx.ext.autodoc',
    'numpydoc',
]
numpydoc_show_class_members = False

templates_path = []
exclude_patterns = []

html_theme = 'pydata_sphinx_theme'
html_static_path = []
