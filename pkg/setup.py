# Licensed under the MIT license.

from setuptools import setup

setup(
    name="pySlicer",
    packages=["pyslicer"],
    version="0.1.0",
    description=(
        "Learns Independent Cascade transmission probabilities and network "
        "structure from partial cascade observations with dynamic message passing."
    ),
    keywords=[
        "independent cascade",
        "dynamic message passing",
        "network inference",
        "structure learning",
        "epidemics",
    ],
    license="MIT",
    classifiers=[
        "Development Status :: 4 - Beta",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: MIT License",
        "Topic :: Scientific/Engineering",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
    ],
    install_requires=["numpy>=1.22", "networkx>=2.8", "pandas>=1.4", "scikit-learn>=1.0"],
    entry_points={"console_scripts": ["pyslicer = pyslicer.cli:main"]},
    python_requires=">=3.9",
)
