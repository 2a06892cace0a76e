# Configuration file for the Sphinx documentation builder.
#
# For the full list of built-in configuration values, see the documentation:
# https://www.sphinx-doc.org/en/master/usage/configuration.html
import os
import sys

sys.path.insert(0, os.path.abspath('..'))

# -- Project information -----------------------------------------------------

project = 'icon-cluster-malware'
copyright = '2024, basilegupov'
author = 'basilegupov'
release = '0.1.0'
html_title = 'icon-cluster-malware: icon clustering features for static PE malware detection'

# -- General configuration ---------------------------------------------------

extensions = ['sphinx.ext.autodoc']
autodoc_member_order = 'bysource'

templates_path = ['_templates']
exclude_patterns = ['_build', 'Thumbs.db', '.DS_Store']

# -- Options for HTML output -------------------------------------------------

html_theme = 'nature'
html_static_path = ['_static']
