# Configuration file for the Sphinx documentation builder.
#
# https://www.sphinx-doc.org/en/master/usage/configuration.html

from __future__ import annotations

import os
import sys

sys.path.insert(0, os.path.abspath("../.."))

import tpu_imac_sim  # noqa: E402

# -- Project information -----------------------------------------------------

project = "tpu-imac-sim"
copyright = "2023, TPU-IMAC simulator developers"
author = "TPU-IMAC simulator developers"
release = tpu_imac_sim.__version__

# -- General configuration ---------------------------------------------------

extensions = [
    "sphinx.ext.autodoc",
    "recommonmark",
    "sphinx_copybutton",
    "sphinx.ext.napoleon",
    "sphinx.ext.autosummary",
    "sphinx.ext.viewcode",
    "sphinxcontrib.programoutput",
]

autosummary_generate = True

# generate documentation from type hints
autodoc_typehints = "description"
autoclass_content = "both"

add_module_names = False

exclude_patterns: list[str] = []

# -- Options for HTML output -------------------------------------------------

html_theme = "furo"
html_title = "tpu-imac-sim"
