from codecs import open
from os import path

from setuptools import find_packages, setup

here = path.abspath(path.dirname(__file__))

# Get the long description from the README file
with open(path.join(here, "README.md"), encoding="utf-8") as f:
    long_description = f.read()

setup(
    name="uvhfield",
    version="0.4.0",
    description="Pose-controllable surface-aligned radiance fields around a skinned body mesh.",
    long_description=long_description,
    long_description_content_type="text/markdown",
    url="https://github.com/lainproliant/uvhfield",
    author="Lain Musgrove (lainproliant)",
    author_email="lainproliant@gmail.com",
    license="BSD",
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "Topic :: Scientific/Engineering :: Image Processing",
        "License :: OSI Approved :: BSD License",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
    ],
    keywords="radiance field skinning hash encoding volume rendering",
    packages=find_packages(exclude=["examples", "examples.*"]),
    python_requires=">=3.10",
    install_requires=["numpy>=1.23", "Pillow>=9.0"],
    extras_require={},
    package_data={"uvhfield": ["LICENSE"]},
    data_files=[],
    entry_points={"console_scripts": ["uvhfield=uvhfield.cli:main"]},
)
