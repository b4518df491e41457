# Sphinx configuration for the krflow documentation
import os
import sys

sys.path.insert(0, os.path.abspath('..'))

from krflow.version import __version__

extensions = ["sphinx.ext.mathjax",
              "sphinx.ext.autosectionlabel",
              "sphinx.ext.napoleon",
              "sphinx.ext.autodoc",
              "sphinx.ext.autosummary"]

# numpy style docstrings only
napoleon_google_docstring = False
autosummary_generate = True
autosectionlabel_prefix_document = True

source_suffix = ".rst"
master_doc = "index"

project = "krflow"
copyright = "2026, krflow developers"
version = __version__
release = __version__

pygments_style = "sphinx"

if os.environ.get("READTHEDOCS", None) != "True":
    import sphinx_rtd_theme
    html_theme = "sphinx_rtd_theme"
    html_theme_path = [sphinx_rtd_theme.get_html_theme_path()]
else:
    html_theme = "default"
