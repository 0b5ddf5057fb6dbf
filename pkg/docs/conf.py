# Sphinx configuration of the py-pse documentation.
# Option reference: https://www.sphinx-doc.org/en/master/usage/configuration.html
import os
import re
import sys
from datetime import date

# autodoc imports the package from the repository root
sys.path.insert(0, os.path.abspath('..'))

with open(os.path.join(os.path.dirname(__file__), '..', 'pse', '__init__.py'), encoding='utf-8') as f:
    release = re.search(r"^__version__ = ['\"]([^'\"]*)['\"]", f.read(), re.M).group(1)

project = 'py-pse'
copyright = f'{date.today().year}, py-pse developers'
author = 'py-pse developers'
version = '.'.join(release.split('.')[:2])

extensions = [
    'sphinx_rtd_theme',
    'sphinx.ext.autodoc',
    'sphinx_autodoc_typehints',
    'sphinx.ext.autosummary',
    'sphinx.ext.mathjax'
]

# keep the members in the order of the source file (the modules read top down)
autodoc_member_order = 'bysource'
typehints_defaults = 'comma'

templates_path = ['_templates']
exclude_patterns = ['_build', 'Thumbs.db', '.DS_Store']

html_theme = "sphinx_rtd_theme"
html_static_path = ['_static']
