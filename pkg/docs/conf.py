# PyRankOne documentation build configuration file.
#
# Build with ``sphinx-build docs dist/site -b dirhtml -a``.

import sys
import os

# Make the package importable for autodoc.
sys.path.insert(0, os.path.abspath("../"))
exclude_dirnames = ["test"]

# -- General configuration ------------------------------------------------

needs_sphinx = "1.8"
extensions = ["sphinx.ext.autodoc", "sphinx.ext.githubpages"]
templates_path = ["_templates"]
source_suffix = ".rst"
root_doc = "index"

project = "PyRankOne"
copyright = "2026, PyRankOne developers"
author = "PyRankOne developers"

# The short X.Y version and the full release string.
version = "0.1.0"
release = "0.1.0"

language = "en"

exclude_patterns = [
    "_build",
    "pyrankone/test/*",
    "test/*",
    "pyrankone/test",
    "../pyrankone/test",
]

pygments_style = "sphinx"
todo_include_todos = False

# Docstrings use ``:param:``/``:type:`` fields and numpy shapes.
autodoc_member_order = "bysource"

# -- Options for HTML output ----------------------------------------------

html_theme = "furo"
html_static_path = []
htmlhelp_basename = "PyRankOnedoc"

# -- Options for other builders -------------------------------------------

latex_documents = [
    (
        root_doc,
        "PyRankOne.tex",
        "PyRankOne Documentation",
        author,
        "manual",
    )
]

man_pages = [(root_doc, "pyrankone", "PyRankOne Documentation", [author], 1)]

texinfo_documents = [
    (
        root_doc,
        "PyRankOne",
        "PyRankOne Documentation",
        author,
        "PyRankOne",
        "Rank-one accelerated tabular MDP solvers.",
        "Miscellaneous",
    )
]
