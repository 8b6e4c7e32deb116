"""
Setup script for ortho-kit.

Installs the library modules and the `ortho` console command.
"""

from setuptools import setup

# Package metadata
NAME = "ortho-kit"
VERSION = "0.1.0"
DESCRIPTION = "Numerical checks of Neyman orthogonality and pathwise differentiability on finite sample spaces"
AUTHOR = "ortho-kit developers"
AUTHOR_EMAIL = ""
URL = ""
LICENSE = "MIT"

# Dependencies
INSTALL_REQUIRES = [
    "numpy",
    "scipy",
]

EXTRAS_REQUIRE = {
    "test": ["hypothesis"],
}

# Entry points
ENTRY_POINTS = {
    "console_scripts": [
        "ortho=main:main",
    ],
}

# Setup configuration
setup(
    name=NAME,
    version=VERSION,
    description=DESCRIPTION,
    author=AUTHOR,
    author_email=AUTHOR_EMAIL,
    url=URL,
    license=LICENSE,
    py_modules=[
        "model_core",
        "submodel",
        "functional_calculus",
        "estimating_engine",
        "ate_model",
        "main",
    ],
    install_requires=INSTALL_REQUIRES,
    extras_require=EXTRAS_REQUIRE,
    entry_points=ENTRY_POINTS,
    python_requires=">=3.10",
    classifiers=[
        "Development Status :: 4 - Beta",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: MIT License",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.11",
        "Topic :: Scientific/Engineering :: Mathematics",
    ],
)
