import setuptools

with open("README.md", "r") as fh:
    long_description = fh.read()

setuptools.setup(
    name="reland",
    version="0.1.0",
    description="Landmine risk estimation with spatial validation protocols",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=setuptools.find_packages(exclude=["test", "test.*"]),
    python_requires=">=3.8",
    install_requires=[
        "numpy>=1.21",
        "scipy>=1.7",
        "pandas>=1.3",
        "scikit-learn>=1.0",
        "tabulate>=0.8.7",
        "geojson>=2.5",
        "matplotlib>=3.5",
        "libpysal>=4.6",
        "esda>=2.4",
        "PyYAML>=5.4",
    ],
    entry_points={
        "console_scripts": [
            "reland=reland.cli:main",
        ],
    },
    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: Mozilla Public License 2.0 (MPL 2.0)",
        "Operating System :: OS Independent",
        "Topic :: Scientific/Engineering :: GIS",
    ],
)
